"""Posterior predictive summaries and chain-level reports."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Literal, Sequence

import numpy as np

from .model import PriorConfig, hard_leaf_index, leaf_weights

__all__ = [
    "InsufficientSamplesError",
    "Predictive",
    "sample_predict",
    "posterior_predict",
    "point_metric",
    "MetricsReport",
    "compute_report",
    "combine_reports",
    "write_metric_trace",
]


class InsufficientSamplesError(ValueError):
    """No (post-burn-in) samples to summarise."""


@dataclass
class Predictive:
    """Averaged predictions at a set of query points.

    Regression fills ``mean`` and ``var`` (which includes the noise
    variance); classification fills ``probs`` (``n x M``) and ``label``
    (1-based argmax, ties to the lowest class).
    """

    task: str
    mean: np.ndarray | None = None
    var: np.ndarray | None = None
    probs: np.ndarray | None = None

    @property
    def label(self) -> np.ndarray:
        return np.argmax(self.probs, axis=1) + 1

    @property
    def point(self) -> np.ndarray:
        return self.mean if self.task == "regression" else self.label


def _weights(X, sample, h, mode):
    if mode == "hard":
        idx = hard_leaf_index(X, sample.topo, sample.params)
        W = np.zeros((X.shape[0], sample.topo.n_leaves))
        W[np.arange(X.shape[0]), idx] = 1.0
        return W
    return leaf_weights(X, sample.topo, sample.params, h)


def _leaf_class_probs(sample, train, h, prior: PriorConfig, mode) -> np.ndarray:
    """Dirichlet posterior means per leaf, shape ``(n_leaves, M)``."""
    alpha = np.asarray(prior.dirichlet_alpha, dtype=float)
    W = _weights(train.X, sample, h, mode)
    onehot = np.zeros((train.n, alpha.size))
    onehot[np.arange(train.n), np.asarray(train.y, dtype=np.int64) - 1] = 1.0
    counts = W.T @ onehot + alpha
    return counts / counts.sum(axis=1, keepdims=True)


def sample_predict(sample, X, h: float, task: str, train=None, prior: PriorConfig | None = None,
                   mode: Literal["soft", "hard"] = "soft"):
    """Prediction of a single posterior draw: mean vector or class-probability matrix."""
    W = _weights(np.asarray(X, dtype=float), sample, h, mode)
    if task == "regression":
        mu = np.array([sample.params.mu[k] for k in sample.topo.leaf_ids])
        return W @ mu
    if train is None or prior is None:
        raise ValueError("classification predictions need the training data and prior")
    return W @ _leaf_class_probs(sample, train, h, prior, mode)


def posterior_predict(samples: Sequence, X, h: float, task: str, train=None,
                      prior: PriorConfig | None = None, mode: Literal["soft", "hard"] = "soft") -> Predictive:
    """Monte Carlo average of per-draw predictions."""
    if not samples:
        raise InsufficientSamplesError("posterior_predict needs at least one sample")
    X = np.asarray(X, dtype=float)
    if task == "regression":
        total = np.zeros(X.shape[0])
        second = np.zeros(X.shape[0])
        for s in samples:
            m = sample_predict(s, X, h, task, mode=mode)
            total += m
            second += m * m + s.params.sigma ** 2
        mean = total / len(samples)
        return Predictive(task, mean=mean, var=np.maximum(second / len(samples) - mean * mean, 0.0))
    probs = None
    for s in samples:
        p = sample_predict(s, X, h, task, train, prior, mode)
        probs = p if probs is None else probs + p
    return Predictive(task, probs=probs / len(samples))


def point_metric(task: str, pred: np.ndarray, y: np.ndarray) -> float:
    """MSE for regression, accuracy for classification."""
    if task == "regression":
        return float(np.mean((np.asarray(pred) - np.asarray(y)) ** 2))
    return float(np.mean(np.asarray(pred) == np.asarray(y)))


def _per_sample_metric(s, data, h, task, train, prior, mode):
    p = sample_predict(s, data.X, h, task, train, prior, mode)
    if task == "classification":
        p = np.argmax(p, axis=1) + 1
    return point_metric(task, p, data.y)


@dataclass
class MetricsReport:
    """Per-chain summary.

    ``train_metric``/``test_metric`` average the per-draw metric over the
    post-burn-in draws (MSE or accuracy); the ``ensemble_*`` fields score
    the averaged prediction instead.
    """

    task: str
    metric: str
    train_metric: float
    test_metric: float
    ensemble_train_metric: float
    ensemble_test_metric: float
    ave_leaves: float
    acceptance_rate: float
    n_samples: int
    n_iterations: int
    n_divergent: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def compute_report(samples: Sequence, train, test, h: float, prior: PriorConfig | None = None,
                   mode: Literal["soft", "hard"] = "soft", thin: int = 1) -> MetricsReport:
    """Summarise one chain: metrics on post-burn-in draws, acceptance over all iterations."""
    if not samples:
        raise InsufficientSamplesError("empty chain")
    post = [s for s in samples if s.phase == "sampling"]
    if not post:
        raise InsufficientSamplesError("no post-burn-in samples")
    task = train.task
    used = post[::thin]
    tr = [_per_sample_metric(s, train, h, task, train, prior, mode) for s in used]
    te = [_per_sample_metric(s, test, h, task, train, prior, mode) for s in used] if test is not None else [math.nan]
    ens_tr = posterior_predict(used, train.X, h, task, train, prior, mode).point
    ens_train = point_metric(task, ens_tr, train.y)
    if test is not None:
        ens_test = point_metric(task, posterior_predict(used, test.X, h, task, train, prior, mode).point, test.y)
    else:
        ens_test = math.nan
    return MetricsReport(
        task=task,
        metric="mse" if task == "regression" else "accuracy",
        train_metric=float(np.mean(tr)),
        test_metric=float(np.mean(te)),
        ensemble_train_metric=ens_train,
        ensemble_test_metric=ens_test,
        ave_leaves=float(np.mean([s.topo.n_leaves for s in post])),
        acceptance_rate=100.0 * float(np.mean([s.accepted for s in samples])),
        n_samples=len(post),
        n_iterations=len(samples),
        n_divergent=int(sum(getattr(s, "n_divergent", 0) for s in samples)),
    )


_SUMMARY_FIELDS = (
    "train_metric", "test_metric", "ensemble_train_metric", "ensemble_test_metric",
    "ave_leaves", "acceptance_rate",
)


def combine_reports(reports: Sequence[MetricsReport]) -> dict:
    """Across-restart mean and (sample) standard deviation of each metric."""
    if not reports:
        raise InsufficientSamplesError("no chain reports to combine")
    out: dict = {"n_chains": len(reports), "task": reports[0].task, "metric": reports[0].metric}
    for name in _SUMMARY_FIELDS:
        vals = np.array([getattr(r, name) for r in reports], dtype=float)
        out[name] = {
            "mean": float(np.mean(vals)),
            "sd": float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0,
        }
    return out


def write_metric_trace(path, samples: Sequence, test, h: float, train=None,
                       prior: PriorConfig | None = None) -> None:
    """CSV of iteration, test metric, leaf count, log posterior and acceptance."""
    task = test.task
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "phase", "test_metric", "n_leaves", "logpost", "accepted", "move"])
        for s in samples:
            m = _per_sample_metric(s, test, h, task, train, prior, "soft")
            w.writerow([s.iteration, s.phase, repr(m), s.topo.n_leaves, repr(float(s.logpost)),
                        int(s.accepted), s.move])
