import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmctree.data import Dataset, Normalization
from hmctree.metrics import (
    InsufficientSamplesError,
    combine_reports,
    compute_report,
    posterior_predict,
    write_metric_trace,
)
from hmctree.model import PriorConfig, TreeParams
from hmctree.rjsampler import ChainSample
from hmctree.topology import TreeTopology
from hmctree.trace import TraceWriter, read_trace, record_to_sample, sample_to_record

H = 0.01


def regression_sample(mus, tau=0.5, sigma=0.3, i=0, phase="sampling", accepted=True):
    if len(mus) == 1:
        topo = TreeTopology.root_only()
        params = TreeParams("DF", mu={0: mus[0]}, sigma=sigma)
    else:
        topo = TreeTopology.from_nested((None, None))
        params = TreeParams("DF", tau={0: tau}, kappa={0: 0}, mu={1: mus[0], 2: mus[1]}, sigma=sigma)
    return ChainSample(i, topo, params, -1.0, "stay", accepted, phase)


def data(X, y, task="regression"):
    X = np.asarray(X, dtype=float).reshape(len(y), -1)
    return Dataset(X, np.asarray(y), task, Normalization.identity(X.shape[1]))


def test_root_only_prediction_is_constant():
    X = np.random.default_rng(0).uniform(size=(7, 2))
    pred = posterior_predict([regression_sample([2.5])], X, H, "regression")
    np.testing.assert_array_equal(pred.mean, 2.5)
    np.testing.assert_allclose(pred.var, 0.09)


def test_two_sample_average():
    X = np.array([[0.1], [0.9]])
    pred = posterior_predict([regression_sample([1.0]), regression_sample([4.0])], X, H, "regression")
    np.testing.assert_allclose(pred.mean, 2.5)
    np.testing.assert_allclose(pred.var, 0.09 + 2.25)


def test_empty_samples_rejected():
    with pytest.raises(InsufficientSamplesError):
        posterior_predict([], np.zeros((1, 1)), H, "regression")


@settings(max_examples=50, deadline=None)
@given(st.permutations(range(5)))
def test_regression_mean_order_invariant(order):
    rng = np.random.default_rng(1)
    samples = [regression_sample(list(rng.normal(size=2)), tau=rng.uniform()) for _ in range(5)]
    X = rng.uniform(size=(9, 1))
    a = posterior_predict(samples, X, 0.05, "regression").mean
    b = posterior_predict([samples[i] for i in order], X, 0.05, "regression").mean
    np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-15)


def test_classification_probabilities():
    train = data([[0.1], [0.2], [0.8], [0.9]], [1, 1, 2, 2], "classification")
    prior = PriorConfig().resolved(1, 2)
    topo = TreeTopology.from_nested((None, None))
    s = ChainSample(0, topo, TreeParams("DF", tau={0: 0.5}, kappa={0: 0}), 0.0, "stay", True, "sampling")
    pred = posterior_predict([s], train.X, H, "classification", train, prior)
    np.testing.assert_allclose(pred.probs.sum(axis=1), 1.0, atol=1e-10)
    # Dirichlet(1, 1) posterior mean with two counts in one class
    np.testing.assert_allclose(pred.probs[0], [0.75, 0.25], atol=1e-10)
    assert pred.label.tolist() == [1, 1, 2, 2]
    rep = compute_report([s], train, train, H, prior)
    assert rep.train_metric == 1.0 and rep.test_metric == 1.0


def test_classification_tie_goes_to_lowest_class():
    train = data([[0.5], [0.5]], [1, 2], "classification")
    prior = PriorConfig().resolved(1, 2)
    s = ChainSample(0, TreeTopology.root_only(), TreeParams("DF"), 0.0, "stay", True, "sampling")
    pred = posterior_predict([s], train.X, H, "classification", train, prior)
    assert pred.label.tolist() == [1, 1]


def test_report_counts():
    X = np.linspace(0, 1, 10)
    d = data(X, np.where(X < 0.5, 1.0, 3.0))
    burn = [regression_sample([0.0], i=i, phase="burn-in", accepted=False) for i in range(3)]
    post = [regression_sample([1.0, 3.0], i=3 + i, accepted=False) for i in range(4)]
    rep = compute_report(burn + post, d, d, 1e-3)
    assert rep.acceptance_rate == 0.0
    assert rep.ave_leaves == 2.0
    assert rep.n_samples == 4 and rep.n_iterations == 7
    assert rep.test_metric == pytest.approx(0.0, abs=1e-12)


def test_report_needs_sampling_phase():
    d = data([0.5], [1.0])
    with pytest.raises(InsufficientSamplesError):
        compute_report([regression_sample([0.0], phase="burn-in")], d, d, H)


def test_combine_reports():
    d = data([0.2, 0.8], [1.0, 2.0])
    r1 = compute_report([regression_sample([1.0])], d, d, H)
    r2 = compute_report([regression_sample([2.0])], d, d, H)
    out = combine_reports([r1, r2])
    assert out["n_chains"] == 2
    assert out["test_metric"]["mean"] == pytest.approx((0.5 + 0.5) / 2)
    assert out["acceptance_rate"]["mean"] == 100.0
    json.dumps(out)


def test_metric_trace_csv(tmp_path):
    d = data([0.2, 0.8], [1.0, 2.0])
    samples = [regression_sample([1.0], i=0, phase="burn-in"), regression_sample([1.0, 2.0], i=1)]
    path = tmp_path / "m.csv"
    write_metric_trace(path, samples, d, H)
    rows = list(csv.DictReader(open(path)))
    assert [r["n_leaves"] for r in rows] == ["1", "2"]
    assert float(rows[1]["test_metric"]) == pytest.approx(0.0, abs=1e-12)


def test_trace_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    topo = TreeTopology.from_nested(((None, None), None))
    params = TreeParams("DFI", sigma=0.123456789)
    for nid in topo.internal_ids:
        params.tau[nid] = float(rng.uniform())
        params.delta[nid] = rng.dirichlet([1.0, 1.0, 1.0])
    for nid in topo.leaf_ids:
        params.mu[nid] = float(rng.normal())
    s = ChainSample(4, topo, params, -12.345678901234567, "grow", True, "sampling", 0.001, 0.42,
                    "grow", 1, 17, 0.0123)
    path = tmp_path / "t.jsonl"
    with TraceWriter(path) as w:
        w(s)
        w(regression_sample([1.0 / 3.0], i=5))
    back = read_trace(path)
    assert len(back) == 2
    r = back[0]
    assert r.topo == topo and r.params.same_as(params)
    assert (r.logpost, r.h, r.accept_prob, r.step_size) == (s.logpost, s.h, s.accept_prob, s.step_size)
    assert sample_to_record(record_to_sample(sample_to_record(s))) == sample_to_record(s)
    assert back[1].params.mu == {0: 1.0 / 3.0}
