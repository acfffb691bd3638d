"""Soft decision-tree model: path probabilities, likelihoods, priors, gradients.

Two split parameterisations are supported:

``DF``
    each internal node compares one input ``x[kappa]`` with a threshold;
``DFI``
    each internal node compares a simplex-weighted mix ``x @ delta`` with a
    threshold.

In both cases ``psi = logistic((value - tau) / h)`` is the probability of
stepping to the RIGHT child. Split dimensions are 0-based throughout.

Continuous parameters are sampled in unconstrained space; :class:`Posterior`
binds a topology (and, for DF, the split dimensions) to a dataset and exposes
the log density and gradient that the NUTS engine consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal, Mapping

import numpy as np
from scipy.special import gammaln

from . import kernels
from .topology import TreeTopology, path_info
from .transforms import StickBreak, log_logistic, logistic, stickbreak_unconstrain

__all__ = [
    "Variant",
    "PriorConfig",
    "TreeParams",
    "CompiledTree",
    "compile_tree",
    "ParamLayout",
    "Posterior",
    "psi",
    "split_logits",
    "leaf_weights",
    "loglik",
    "loglik_classification",
    "loglik_regression",
    "log_topology_prior",
    "logprior",
    "log_posterior",
    "grad_logpost",
    "hard_leaf_index",
    "p_split",
]

Variant = Literal["DF", "DFI"]
LOG_2PI = math.log(2.0 * math.pi)
_LOG_SIGMA_MAX = 700.0


@dataclass(frozen=True)
class PriorConfig:
    """Prior hyperparameters.

    ``mu_prior`` is (mean, variance) of the normal leaf-mean prior and
    ``sigma_prior`` is (shape, scale) of the inverse-gamma prior placed on
    the noise standard deviation. ``None`` entries are filled from the data
    dimensions by :meth:`resolved`.
    """

    alpha_split: float = 0.45
    beta_split: float = 2.5
    dirichlet_alpha: tuple[float, ...] | None = None
    mu_prior: tuple[float, float] = (0.0, 1.0)
    sigma_prior: tuple[float, float] = (1.5, 1.5)
    index_probs: tuple[float, ...] | None = None
    simplex_alpha: tuple[float, ...] | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha_split < 1.0:
            raise ValueError("alpha_split must lie in (0, 1)")
        if self.beta_split < 0.0:
            raise ValueError("beta_split must be non-negative")
        if self.mu_prior[1] <= 0.0 or min(self.sigma_prior) <= 0.0:
            raise ValueError("prior scale/shape parameters must be positive")
        for vec in (self.dirichlet_alpha, self.simplex_alpha):
            if vec is not None and min(vec) <= 0.0:
                raise ValueError("concentration parameters must be positive")
        if self.index_probs is not None:
            p = np.asarray(self.index_probs)
            if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
                raise ValueError("index_probs must be a probability vector")

    def resolved(self, n_features: int, n_classes: int = 0) -> "PriorConfig":
        return replace(
            self,
            dirichlet_alpha=self.dirichlet_alpha
            if self.dirichlet_alpha is not None or n_classes == 0
            else (1.0,) * n_classes,
            index_probs=self.index_probs
            if self.index_probs is not None
            else (1.0 / n_features,) * n_features,
            simplex_alpha=self.simplex_alpha
            if self.simplex_alpha is not None
            else (1.0,) * n_features,
        )


@dataclass
class TreeParams:
    """Per-node parameters keyed by node id.

    ``kappa`` (DF) / ``delta`` (DFI) and ``tau`` are keyed by internal node,
    ``mu`` by leaf (regression only); ``sigma`` is the shared noise standard
    deviation (regression only, ``None`` for classification).
    """

    variant: Variant
    tau: dict[int, float] = field(default_factory=dict)
    kappa: dict[int, int] = field(default_factory=dict)
    delta: dict[int, np.ndarray] = field(default_factory=dict)
    mu: dict[int, float] = field(default_factory=dict)
    sigma: float | None = None

    def copy(self) -> "TreeParams":
        return TreeParams(
            self.variant,
            dict(self.tau),
            dict(self.kappa),
            {k: v.copy() for k, v in self.delta.items()},
            dict(self.mu),
            self.sigma,
        )

    def check(self, topo: TreeTopology, regression: bool) -> None:
        internal = set(topo.internal_ids)
        if set(self.tau) != internal:
            raise ValueError("tau keys must match the internal nodes")
        split = self.kappa if self.variant == "DF" else self.delta
        if set(split) != internal:
            raise ValueError("split keys must match the internal nodes")
        if regression:
            if set(self.mu) != set(topo.leaf_ids):
                raise ValueError("mu keys must match the leaves")
            if self.sigma is None or not self.sigma > 0:
                raise ValueError("sigma must be positive")

    def same_as(self, other: "TreeParams") -> bool:
        return (
            self.variant == other.variant
            and self.tau == other.tau
            and self.kappa == other.kappa
            and self.mu == other.mu
            and self.sigma == other.sigma
            and self.delta.keys() == other.delta.keys()
            and all(np.array_equal(v, other.delta[k]) for k, v in self.delta.items())
        )


def p_split(depth: int, prior: PriorConfig) -> float:
    return prior.alpha_split * (1.0 + depth) ** (-prior.beta_split)


# ---------------------------------------------------------------------------
# topology compilation
# ---------------------------------------------------------------------------
class CompiledTree:
    """Array view of a topology consumed by the kernels."""

    __slots__ = ("topo", "internal", "leaves", "col", "path_idx", "path_dir")

    def __init__(self, topo: TreeTopology):
        self.topo = topo
        self.internal = topo.internal_ids
        self.leaves = topo.leaf_ids
        self.col = {nid: j for j, nid in enumerate(self.internal)}
        depth = max((topo.depth(k) for k in self.leaves), default=0)
        self.path_idx = np.full((len(self.leaves), max(depth, 1)), -1, dtype=np.int64)
        self.path_dir = np.zeros((len(self.leaves), max(depth, 1)), dtype=np.int64)
        for k, leaf in enumerate(self.leaves):
            info = path_info(topo, leaf)
            for d, (anc, step) in enumerate(zip(info.ancestors, info.directions)):
                self.path_idx[k, d] = self.col[anc]
                self.path_dir[k, d] = step


_compiled_cache: dict[int, CompiledTree] = {}


def compile_tree(topo: TreeTopology) -> CompiledTree:
    key = id(topo)
    hit = _compiled_cache.get(key)
    if hit is not None and hit.topo is topo:
        return hit
    if len(_compiled_cache) > 256:
        _compiled_cache.clear()
    ct = CompiledTree(topo)
    _compiled_cache[key] = ct
    return ct


# ---------------------------------------------------------------------------
# forward model
# ---------------------------------------------------------------------------
def _split_inputs(X: np.ndarray, ct: CompiledTree, params: TreeParams) -> np.ndarray:
    """Value compared against each threshold: ``x[kappa]`` or ``x @ delta``."""
    if not ct.internal:
        return np.zeros((X.shape[0], 0))
    if params.variant == "DF":
        return X[:, [params.kappa[j] for j in ct.internal]]
    D = np.stack([params.delta[j] for j in ct.internal])
    return X @ D.T


def split_logits(X: np.ndarray, topo: TreeTopology, params: TreeParams, h: float) -> np.ndarray:
    ct = compile_tree(topo)
    tau = np.array([params.tau[j] for j in ct.internal])
    return (_split_inputs(X, ct, params) - tau) / h


def psi(x, node: int, params: TreeParams, h: float) -> float:
    """Probability that input vector ``x`` steps right at internal ``node``."""
    x = np.asarray(x, dtype=float)
    value = x[params.kappa[node]] if params.variant == "DF" else float(x @ params.delta[node])
    return float(logistic((value - params.tau[node]) / h))


def leaf_weights(X: np.ndarray, topo: TreeTopology, params: TreeParams, h: float) -> np.ndarray:
    """Path probabilities, shape ``(N, n_leaves)``, columns in ``topo.leaf_ids`` order."""
    ct = compile_tree(topo)
    Z = split_logits(np.asarray(X, dtype=float), topo, params, h)
    return kernels.leaf_weights(Z, ct.path_idx, ct.path_dir)[1]


def _labels0(y) -> np.ndarray:
    return np.asarray(y, dtype=np.int64) - 1


def loglik_classification(X, y, topo, params, h, prior: PriorConfig) -> float:
    """Soft Dirichlet-multinomial log-likelihood; labels ``y`` are 1..M."""
    ct = compile_tree(topo)
    alpha = np.asarray(prior.dirichlet_alpha, dtype=float)
    Z = split_logits(np.asarray(X, dtype=float), topo, params, h)
    return kernels.classification_loglik(Z, ct.path_idx, ct.path_dir, _labels0(y), alpha, False)[0]


def loglik_regression(X, y, topo, params, h) -> float:
    ct = compile_tree(topo)
    Z = split_logits(np.asarray(X, dtype=float), topo, params, h)
    mu = np.array([params.mu[k] for k in ct.leaves])
    return kernels.regression_loglik(
        Z, ct.path_idx, ct.path_dir, mu, np.asarray(y, dtype=float), params.sigma, False
    )[0]


def loglik(data, topo, params, h, prior) -> float:
    if data.task == "classification":
        return loglik_classification(data.X, data.y, topo, params, h, prior)
    return loglik_regression(data.X, data.y, topo, params, h)


def log_topology_prior(topo: TreeTopology, prior: PriorConfig) -> float:
    total = 0.0
    for nid in topo.internal_ids:
        total += math.log(p_split(topo.depth(nid), prior))
    for nid in topo.leaf_ids:
        total += math.log1p(-p_split(topo.depth(nid), prior))
    return total


def _log_dirichlet(x: np.ndarray, alpha: np.ndarray) -> float:
    return float(gammaln(alpha.sum()) - gammaln(alpha).sum() + np.sum((alpha - 1.0) * np.log(x)))


def logprior(topo: TreeTopology, params: TreeParams, prior: PriorConfig, regression: bool) -> float:
    """Log prior density of (topology, split, threshold, leaf) parameters.

    Thresholds are Beta(1, 1) and contribute nothing. Dirichlet densities are
    taken with respect to Lebesgue measure on the first K-1 coordinates.
    """
    lp = log_topology_prior(topo, prior)
    if params.variant == "DF":
        probs = prior.index_probs
        for j in topo.internal_ids:
            lp += math.log(probs[params.kappa[j]])
    else:
        alpha = np.asarray(prior.simplex_alpha, dtype=float)
        for j in topo.internal_ids:
            lp += _log_dirichlet(params.delta[j], alpha)
    if regression:
        m0, v0 = prior.mu_prior
        for k in topo.leaf_ids:
            lp += -0.5 * (LOG_2PI + math.log(v0)) - 0.5 * (params.mu[k] - m0) ** 2 / v0
        a, b = prior.sigma_prior
        s = params.sigma
        lp += a * math.log(b) - math.lgamma(a) - (a + 1.0) * math.log(s) - b / s
    return lp


def log_posterior(data, topo, params, h, prior) -> float:
    """Unnormalised log posterior in constrained coordinates (no Jacobians)."""
    return loglik(data, topo, params, h, prior) + logprior(
        topo, params, prior, data.task == "regression"
    )


def hard_leaf_index(X: np.ndarray, topo: TreeTopology, params: TreeParams) -> np.ndarray:
    """Column (in ``topo.leaf_ids`` order) reached by each row under hard routing."""
    X = np.asarray(X, dtype=float)
    leaf_col = {leaf: k for k, leaf in enumerate(topo.leaf_ids)}
    out = np.empty(X.shape[0], dtype=np.int64)
    for i, x in enumerate(X):
        nid = topo.root
        while not topo.is_leaf(nid):
            node = topo[nid]
            value = x[params.kappa[nid]] if params.variant == "DF" else float(x @ params.delta[nid])
            nid = node.left if value < params.tau[nid] else node.right
        out[i] = leaf_col[nid]
    return out


# ---------------------------------------------------------------------------
# unconstrained parameterisation
# ---------------------------------------------------------------------------
class ParamLayout:
    """Flat unconstrained vector layout for a given topology.

    Order: thresholds, simplex coordinates (DFI), leaf means, log noise sd.
    ``keys`` names every coordinate so per-coordinate sampler state (such as
    an adapted mass matrix) can follow nodes across topology edits.
    """

    def __init__(self, topo: TreeTopology, variant: Variant, regression: bool, n_features: int):
        self.variant = variant
        self.regression = regression
        self.n_features = n_features
        self.internal = topo.internal_ids
        self.leaves = topo.leaf_ids
        n = len(self.internal)
        km1 = n_features - 1 if variant == "DFI" else 0
        self.km1 = km1
        self.tau = slice(0, n)
        self.delta = slice(n, n + n * km1)
        start = n + n * km1
        n_mu = len(self.leaves) if regression else 0
        self.mu = slice(start, start + n_mu)
        self.sigma = start + n_mu if regression else None
        self.size = start + n_mu + (1 if regression else 0)
        keys: list[tuple] = [("tau", j) for j in self.internal]
        keys += [("delta", j, d) for j in self.internal for d in range(km1)]
        if regression:
            keys += [("mu", k) for k in self.leaves]
            keys.append(("sigma",))
        self.keys = tuple(keys)

    def pack(self, params: TreeParams) -> np.ndarray:
        u = np.empty(self.size)
        tau = np.array([params.tau[j] for j in self.internal])
        u[self.tau] = np.log(tau) - np.log1p(-tau)
        if self.km1 and self.internal:
            D = np.stack([params.delta[j] for j in self.internal])
            u[self.delta] = stickbreak_unconstrain(D).ravel()
        if self.regression:
            u[self.mu] = [params.mu[k] for k in self.leaves]
            u[self.sigma] = math.log(params.sigma)
        return u

    def unpack(self, u: np.ndarray, template: TreeParams) -> TreeParams:
        """Constrained parameters from ``u``; discrete splits come from ``template``."""
        out = TreeParams(self.variant)
        tau = logistic(np.asarray(u[self.tau]))
        out.tau = {j: float(t) for j, t in zip(self.internal, np.atleast_1d(tau))}
        if self.variant == "DF":
            out.kappa = {j: template.kappa[j] for j in self.internal}
        elif self.internal:
            if self.km1:
                D = StickBreak(u[self.delta].reshape(len(self.internal), self.km1)).x
            else:
                D = np.ones((len(self.internal), 1))
            out.delta = {j: D[r].copy() for r, j in enumerate(self.internal)}
        if self.regression:
            out.mu = {k: float(m) for k, m in zip(self.leaves, u[self.mu])}
            out.sigma = math.exp(float(u[self.sigma]))
        return out


class Posterior:
    """Log density over the unconstrained vector for a fixed topology.

    The density is log-likelihood + log-prior + log-Jacobian of the
    constraining maps, so that NUTS in unconstrained space targets the
    constrained posterior. For DF the split dimensions are held fixed at the
    values given in ``params`` (update them with :meth:`with_kappa`).
    """

    def __init__(self, data, topo: TreeTopology, params: TreeParams, h: float, prior: PriorConfig):
        self.data = data
        self.topo = topo
        self.h = float(h)
        self.prior = prior
        self.regression = data.task == "regression"
        self.variant = params.variant
        self.layout = ParamLayout(topo, params.variant, self.regression, data.X.shape[1])
        self.ct = compile_tree(topo)
        self.template = params
        self.X = np.ascontiguousarray(data.X, dtype=float)
        if self.regression:
            self.y = np.asarray(data.y, dtype=float)
        else:
            self.labels = _labels0(data.y)
            self.alpha = np.asarray(prior.dirichlet_alpha, dtype=float)
        self._const = log_topology_prior(topo, prior)
        if self.variant == "DF":
            self._set_kappa(params.kappa)
        else:
            self.simplex_alpha = np.asarray(prior.simplex_alpha, dtype=float)
            self._const += len(self.ct.internal) * float(
                gammaln(self.simplex_alpha.sum()) - gammaln(self.simplex_alpha).sum()
            )
        if self.regression:
            m0, v0 = prior.mu_prior
            a, b = prior.sigma_prior
            self._const += len(self.ct.leaves) * (-0.5 * (LOG_2PI + math.log(v0)))
            self._const += a * math.log(b) - math.lgamma(a)

    def _set_kappa(self, kappa: Mapping[int, int]) -> None:
        cols = [kappa[j] for j in self.ct.internal]
        self.kappa_cols = np.array(cols, dtype=np.int64)
        self.Xk = np.ascontiguousarray(self.X[:, cols]) if cols else np.zeros((self.X.shape[0], 0))
        probs = self.prior.index_probs
        self._kappa_lp = float(sum(math.log(probs[c]) for c in cols))

    def with_kappa(self, kappa: Mapping[int, int]) -> "Posterior":
        other = object.__new__(Posterior)
        other.__dict__.update(self.__dict__)
        other.template = replace(self.template, kappa=dict(kappa))
        other._set_kappa(kappa)
        return other

    @property
    def dim(self) -> int:
        return self.layout.size

    def __call__(self, u: np.ndarray) -> tuple[float, np.ndarray]:
        return self.logp_and_grad(u)

    def logp(self, u: np.ndarray) -> float:
        return self._evaluate(u, False)[0]

    def logp_and_grad(self, u: np.ndarray) -> tuple[float, np.ndarray]:
        return self._evaluate(u, True)

    def _evaluate(self, u: np.ndarray, want_grad: bool):
        L = self.layout
        h = self.h
        grad = np.zeros(L.size) if want_grad else None
        # exp(log sigma) leaves double range here; no posterior mass lives out there
        if self.regression and not abs(float(u[L.sigma])) < _LOG_SIGMA_MAX:
            return -math.inf, grad
        u_tau = u[L.tau]
        tau = logistic(u_tau)
        one_minus_tau = logistic(-u_tau)
        lp = self._const + float(np.sum(log_logistic(u_tau) + log_logistic(-u_tau)))
        sb = None
        if self.variant == "DF":
            lp += self._kappa_lp
            V = self.Xk
        elif L.internal:
            n = len(L.internal)
            if L.km1:
                sb = StickBreak(u[L.delta].reshape(n, L.km1))
                D = sb.x
                lj, lj_grad = sb.log_jacobian()
                lp += float(lj.sum())
            else:
                D = np.ones((n, 1))
            lp += float(np.sum((self.simplex_alpha - 1.0) * np.log(D)))
            V = self.X @ D.T
        else:
            V = np.zeros((self.X.shape[0], 0))
        Z = (V - tau) / h
        ct = self.ct
        if self.regression:
            mu = u[L.mu]
            sigma = math.exp(float(u[L.sigma]))
            ll, dZ, dmu, dsigma = kernels.regression_loglik(
                Z, ct.path_idx, ct.path_dir, mu, self.y, sigma, want_grad
            )
            m0, v0 = self.prior.mu_prior
            a, b = self.prior.sigma_prior
            lp += float(-0.5 * np.sum((mu - m0) ** 2) / v0)
            lp += -(a + 1.0) * math.log(sigma) - b / sigma + math.log(sigma)
        else:
            ll, dZ = kernels.classification_loglik(
                Z, ct.path_idx, ct.path_dir, self.labels, self.alpha, want_grad
            )
        lp += ll
        if not want_grad:
            return lp, None
        if L.internal:
            col_sum = dZ.sum(axis=0)
            # d/du_tau: chain through z = (v - tau)/h and tau = logistic(u); 1 - 2 tau from the Jacobian
            grad[L.tau] = -(col_sum / h) * tau * one_minus_tau + (one_minus_tau - tau)
            if sb is not None:
                dD = (dZ.T @ self.X) / h + (self.simplex_alpha - 1.0) / sb.x
                grad[L.delta] = (sb.vjp(dD) + lj_grad).ravel()
        if self.regression:
            grad[L.mu] = dmu - (mu - m0) / v0
            grad[L.sigma] = dsigma * sigma - (a + 1.0) + b / sigma + 1.0
        return lp, grad

    def pack(self, params: TreeParams) -> np.ndarray:
        return self.layout.pack(params)

    def unpack(self, u: np.ndarray) -> TreeParams:
        return self.layout.unpack(u, self.template)


def grad_logpost(data, topo, u, h, prior, params: TreeParams) -> np.ndarray:
    """Gradient of the unconstrained log posterior at ``u``.

    ``params`` supplies the variant and (for DF) the split dimensions; its
    continuous values are ignored.
    """
    return Posterior(data, topo, params, h, prior).logp_and_grad(np.asarray(u, dtype=float))[1]
