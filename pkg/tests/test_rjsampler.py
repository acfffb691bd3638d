import itertools
import math

import numpy as np
import pytest

from hmctree.data import Dataset, Normalization
from hmctree.model import PriorConfig, TreeParams, log_posterior
from hmctree.rjsampler import (
    MoveConfig,
    NutsEngine,
    RjProposal,
    TreeState,
    accept_burnin,
    accept_full,
    grow_log_ratio,
    hmc_block,
    initial_state,
    log_accept_burnin,
    log_accept_full,
    prune_log_ratio,
    propose_topology,
    run_chain,
)
from hmctree.nuts import ConfigurationError
from hmctree.topology import TreeTopology, grow, prunable_nodes


def dataset(X, y, task):
    X = np.asarray(X, dtype=float)
    return Dataset(X, np.asarray(y, dtype=float if task == "regression" else int), task,
                   Normalization.identity(X.shape[1]))


def all_topologies(max_internal):
    """Every distinct shape with up to ``max_internal`` splits (grown from the root)."""
    seen = {(None): TreeTopology.root_only()}
    frontier = [TreeTopology.root_only()]
    for _ in range(max_internal):
        nxt = []
        for t in frontier:
            for leaf in t.leaf_ids:
                g = grow(t, leaf)
                key = g.to_nested()
                if key not in seen:
                    seen[key] = g
                    nxt.append(g)
        frontier = nxt
    return list(seen.values())


def test_move_config_validation():
    with pytest.raises(ConfigurationError):
        MoveConfig(0.5, 0.5, 0.5)
    with pytest.raises(ConfigurationError):
        MoveConfig(k=0)
    assert MoveConfig(burnin_probs=(0.5, 0.5, 0.0)).probs(True) == (0.5, 0.5, 0.0)
    assert MoveConfig().probs(False) == (0.35, 0.35, 0.3)


def test_stay_is_identity():
    data = dataset([[0.2], [0.8]], [1, 2], "classification")
    prior = PriorConfig().resolved(1, 2)
    state = initial_state(data, "DF", prior, 0.01, np.random.default_rng(0))
    cfg = MoveConfig(0.0, 0.0, 1.0)
    new, prop = propose_topology(state, cfg, prior, np.random.default_rng(1), data)
    assert new is state and prop.move == "stay" and prop.log_proposal_ratio == 0.0


def test_prune_on_root_becomes_stay():
    data = dataset([[0.2], [0.8]], [1, 2], "classification")
    prior = PriorConfig().resolved(1, 2)
    state = initial_state(data, "DF", prior, 0.01, np.random.default_rng(0))
    new, prop = propose_topology(state, MoveConfig(0.0, 1.0, 0.0), prior, np.random.default_rng(1), data)
    assert new is state
    assert (prop.move, prop.requested, prop.log_proposal_ratio) == ("stay", "prune", 0.0)


def test_grow_root_ratio_equals_n_x():
    data = dataset([[0.2, 0.3], [0.8, 0.1]], [1, 2], "classification")
    prior = PriorConfig().resolved(2, 2)
    state = initial_state(data, "DF", prior, 0.01, np.random.default_rng(0))
    cfg = MoveConfig(1.0, 0.0, 0.0)
    # the grow move is forced, the ratio is taken at equal grow/prune mass
    new, prop = propose_topology(state, cfg, prior, np.random.default_rng(2), data)
    assert prop.move == "grow" and new.topo.n_leaves == 2
    ratio = grow_log_ratio(state.topo, new.topo, (0.35, 0.35, 0.3), math.log(0.5))
    assert ratio == pytest.approx(math.log(2.0), abs=1e-15)


@pytest.mark.parametrize("variant", ["DF", "DFI"])
@pytest.mark.parametrize("task", ["classification", "regression"])
def test_grow_prune_are_inverse(variant, task):
    rng = np.random.default_rng(3)
    X = rng.uniform(size=(12, 3))
    y = rng.integers(1, 3, 12) if task == "classification" else rng.normal(size=12)
    data = dataset(X, y, task)
    prior = PriorConfig().resolved(3, 2 if task == "classification" else 0)
    state = initial_state(data, variant, prior, 0.05, rng)
    grow_cfg, prune_cfg = MoveConfig(1.0, 0.0, 0.0), MoveConfig(0.0, 1.0, 0.0)
    for _ in range(4):
        state, _ = propose_topology(state, grow_cfg, prior, rng, data)
    for _ in range(30):
        big, gp = propose_topology(state, grow_cfg, prior, rng, data)
        big.params.check(big.topo, task == "regression")
        # prune the node just grown
        while True:
            back, pp = propose_topology(big, prune_cfg, prior, rng, data)
            if pp.edited_node == gp.edited_node:
                break
        assert back.topo == state.topo
        assert back.params.same_as(state.params)
        # ratios use the probabilities of their own move configs, compare at a common one
        probs = (0.35, 0.35, 0.3)
        lg = grow_log_ratio(state.topo, big.topo, probs, 0.7)
        assert prune_log_ratio(big.topo, state.topo, probs, 0.7) == -lg
        assert pp.u1 == gp.u1 and pp.u3 == gp.u3


def test_reciprocity_exhaustive_small_trees():
    probs_list = [(0.35, 0.35, 0.3), (0.5, 0.2, 0.3), (0.1, 0.8, 0.1)]
    count = 0
    for small in all_topologies(4):  # grown trees have up to 5 splits
        for leaf in small.leaf_ids:
            big = grow(small, leaf)
            assert leaf in prunable_nodes(big)
            for probs, log_u in itertools.product(probs_list, (-3.1, 0.0, math.log(0.5))):
                g = grow_log_ratio(small, big, probs, log_u)
                p = prune_log_ratio(big, small, probs, log_u)
                assert math.isfinite(g) and p == -g
                count += 1
    assert count > 500


def test_hmc_block_root_only_classification_is_identity():
    data = dataset([[0.2], [0.8]], [1, 2], "classification")
    prior = PriorConfig().resolved(1, 2)
    state = initial_state(data, "DF", prior, 0.01, np.random.default_rng(0))
    new, diag = hmc_block(state, 5, NutsEngine(), np.random.default_rng(0), data, prior)
    assert new is state and diag.n_nuts == 0


def test_hmc_block_keeps_logpost_fresh():
    rng = np.random.default_rng(4)
    X = rng.uniform(size=(30, 2))
    data = dataset(X, rng.normal(size=30), "regression")
    prior = PriorConfig().resolved(2)
    state = initial_state(data, "DFI", prior, 0.05, rng)
    state, _ = propose_topology(state, MoveConfig(1.0, 0.0, 0.0), prior, rng, data)
    new, diag = hmc_block(state, 3, NutsEngine(step_size=0.05, adapt=False), rng, data, prior)
    assert diag.n_nuts == 3
    assert new.logpost == pytest.approx(log_posterior(data, new.topo, new.params, new.h, prior), abs=1e-10)


def test_kappa_sweep_finds_informative_dimension():
    rng = np.random.default_rng(5)
    X = rng.uniform(size=(60, 2))
    y = np.where(X[:, 0] < 0.5, 1, 2)
    data = dataset(X, y, "classification")
    prior = PriorConfig().resolved(2, 2)
    topo = TreeTopology.from_nested((None, None))
    params = TreeParams("DF", tau={0: 0.5}, kappa={0: 1})
    state = TreeState.evaluate(data, topo, params, 0.01, prior)
    engine = NutsEngine(step_size=0.02, adapt=False, max_depth=3)
    hits = 0
    n = 300
    for _ in range(n):
        state, _ = hmc_block(state, 1, engine, rng, data, prior)
        hits += state.params.kappa[0] == 0
    assert hits / n > 0.9


def _states(logposts):
    topo = TreeTopology.root_only()
    return [TreeState(topo, TreeParams("DF"), 0.01, lp) for lp in logposts]


def test_accept_examples():
    stay = RjProposal("stay")
    x, x1, x2, x3 = _states([-3.0, -2.0, -2.0, -1.0])
    # stay with pi* = pi: the intermediate factors cancel
    assert accept_full(x, x, x3, x3, stay) == 1.0
    same = _states([-2.0] * 4)
    assert accept_full(*same, stay) == 1.0
    assert accept_burnin(same[0], same[3], stay) == 1.0
    assert accept_burnin(x, x3, stay) == 1.0
    assert accept_burnin(x3, x, stay) == pytest.approx(math.exp(-2.0))
    for a, b in [(-3.0, -1.0), (-1.0, -3.0), (-5.0, -5.5)]:
        lf = log_accept_full(a, a, a, b, b, b, 0.3)
        assert lf == pytest.approx(log_accept_burnin(a, b, 0.3), abs=1e-15)


def test_accept_full_term_by_term():
    # 3-leaf tree pruned to 2 leaves, with distinct pi and pi* values
    pi_x, pi_x3 = -10.25, -11.5
    ps_x, ps_x1, ps_x2, ps_x3 = -10.0, -9.75, -12.0, -11.0
    log_q = math.log(0.35 / 2) - math.log(0.35 / 2 * 1.0 * 0.5)
    terms = [pi_x3, ps_x2, ps_x, log_q, -pi_x, -ps_x3, -ps_x1]
    expected = sum(terms)
    assert log_accept_full(pi_x, ps_x, ps_x1, ps_x2, ps_x3, pi_x3, log_q) == pytest.approx(expected, abs=1e-14)
    x, x1, x2, x3 = _states([ps_x, ps_x1, ps_x2, ps_x3])
    prop = RjProposal("prune", log_proposal_ratio=log_q)
    a = accept_full(x, x1, x2, x3, prop, pi_initial=pi_x, pi_final=pi_x3)
    assert a == pytest.approx(min(1.0, math.exp(expected)))


def test_accept_never_nan():
    stay = RjProposal("stay")
    for lps in ([-math.inf] * 4, [0.0, -math.inf, 0.0, -math.inf], [1e308, -1e308, 1e308, -1e308]):
        a = accept_full(*_states(lps), stay)
        assert 0.0 <= a <= 1.0


def test_stay_only_chain_is_constant():
    data = dataset([[0.2], [0.8]], [1, 2], "classification")
    prior = PriorConfig().resolved(1, 2)
    init = initial_state(data, "DF", prior, 0.01, np.random.default_rng(0))
    out = run_chain(data, init, MoveConfig(0.0, 0.0, 1.0, k=3, n_burnin=2), prior, NutsEngine(), 10,
                    np.random.default_rng(0))
    assert [s.iteration for s in out] == list(range(10))
    for s in out:
        assert s.topo == init.topo and s.params.same_as(init.params) and s.logpost == init.logpost


def test_chain_bookkeeping_and_rejections():
    rng = np.random.default_rng(6)
    X = rng.uniform(size=(40, 2))
    y = np.where(X[:, 0] < 0.4, -1.0, 1.0) + 0.1 * rng.normal(size=40)
    data = dataset(X, y, "regression")
    prior = PriorConfig().resolved(2)
    init = initial_state(data, "DF", prior, 0.05, rng)
    engine = NutsEngine(n_warmup=40, h_init=0.05, h_final=0.05, step_size=0.05, max_depth=4)
    out = run_chain(data, init, MoveConfig(k=2, n_burnin=20), prior, engine, 60, rng)
    prev = init
    n_rej = 0
    for s in out:
        s.params.check(s.topo, True)
        assert 0.0 <= s.accept_prob <= 1.0
        if not s.accepted:
            n_rej += 1
            assert s.topo == prev.topo and s.params.same_as(prev.params)
            assert s.logpost == prev.logpost
        prev = s
        assert s.logpost == pytest.approx(log_posterior(data, s.topo, s.params, s.h, prior), abs=1e-10)
    assert n_rej > 0
    assert {s.phase for s in out} == {"burn-in", "sampling"}


def test_run_chain_rejects_zero_iterations():
    data = dataset([[0.2], [0.8]], [1, 2], "classification")
    prior = PriorConfig().resolved(1, 2)
    init = initial_state(data, "DF", prior, 0.01, np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        run_chain(data, init, MoveConfig(), prior, NutsEngine(), 0, np.random.default_rng(0))
