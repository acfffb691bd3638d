"""Finite-difference verification of the analytic log-posterior gradients."""

from __future__ import annotations

from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from .model import Posterior, PriorConfig, TreeParams
from .topology import TreeTopology, grow

__all__ = ["GradcheckRow", "random_instance", "fd_gradient", "run_gradcheck", "REL_TOL", "ABS_FLOOR"]

REL_TOL = 1e-5
ABS_FLOOR = 1e-8


@dataclass
class GradcheckRow:
    variant: str
    task: str
    family: str
    n_coords: int
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= REL_TOL


def random_topology(n_internal: int, rng: np.random.Generator) -> TreeTopology:
    topo = TreeTopology.root_only()
    for _ in range(n_internal):
        topo = grow(topo, topo.leaf_ids[int(rng.integers(topo.n_leaves))])
    return topo


def random_instance(variant: str, task: str, rng: np.random.Generator):
    """Random (data, topology, params, h, prior) drawn from the test ranges."""
    n_internal = int(rng.integers(0, 6))
    n_x = int(rng.integers(1, 5))
    N = int(rng.integers(1, 51))
    topo = random_topology(n_internal, rng)
    X = rng.uniform(size=(N, n_x))
    if task == "regression":
        y = rng.normal(0.0, 2.0, size=N)
        M = 0
    else:
        M = int(rng.integers(2, 4))
        y = rng.integers(1, M + 1, size=N)
    data = SimpleNamespace(X=X, y=y, task=task)
    prior = PriorConfig(
        dirichlet_alpha=tuple(rng.uniform(0.5, 2.0, size=M)) if M else None,
        simplex_alpha=tuple(rng.uniform(0.5, 2.0, size=n_x)),
    ).resolved(n_x, M)
    params = TreeParams(variant)
    for j in topo.internal_ids:
        params.tau[j] = float(rng.uniform(0.05, 0.95))
        params.kappa[j] = int(rng.integers(n_x))
        params.delta[j] = rng.dirichlet(np.full(n_x, 2.0))
    if task == "regression":
        params.mu = {k: float(rng.normal(0.0, 2.0)) for k in topo.leaf_ids}
        params.sigma = float(rng.uniform(0.3, 2.0))
    h = float(rng.uniform(0.05, 0.5))
    return data, topo, params, h, prior


def fd_gradient(f, u: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Five-point central differences (error O(step^4))."""
    g = np.empty_like(u)
    for i in range(u.size):
        e = np.zeros_like(u)
        e[i] = step
        g[i] = (-f(u + 2 * e) + 8 * f(u + e) - 8 * f(u - e) + f(u - 2 * e)) / (12 * step)
    return g


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """``|a - f| / max(|f|, floor / tol)``: relative error with an absolute floor."""
    return np.abs(analytic - numeric) / np.maximum(np.abs(numeric), ABS_FLOOR / REL_TOL)


def _families(layout) -> dict[str, np.ndarray]:
    out = {"tau": np.arange(layout.size)[layout.tau]}
    if layout.km1:
        out["delta"] = np.arange(layout.size)[layout.delta]
    if layout.regression:
        out["mu"] = np.arange(layout.size)[layout.mu]
        out["sigma"] = np.array([layout.sigma])
    return out


def run_gradcheck(trials: int = 50, seed: int = 0, corrupt: str | None = None) -> list[GradcheckRow]:
    """Compare analytic and numerical gradients on random instances.

    Returns one row per (variant, task, coordinate family) with the largest
    relative error seen. ``corrupt`` names a family whose analytic gradient
    is sign-flipped, to confirm that the harness detects errors.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for variant in ("DF", "DFI"):
        for task in ("regression", "classification"):
            worst: dict[str, float] = {}
            counts: dict[str, int] = {}
            for _ in range(trials):
                data, topo, params, h, prior = random_instance(variant, task, rng)
                post = Posterior(data, topo, params, h, prior)
                if post.dim == 0:
                    continue
                u = post.pack(params) + rng.normal(0.0, 0.3, size=post.dim)
                _, g = post.logp_and_grad(u)
                fams = _families(post.layout)
                if corrupt in fams:
                    g = g.copy()
                    g[fams[corrupt]] *= -1.0
                num = fd_gradient(post.logp, u)
                err = relative_errors(g, num)
                for fam, idx in fams.items():
                    if idx.size == 0:
                        continue
                    worst[fam] = max(worst.get(fam, 0.0), float(err[idx].max()))
                    counts[fam] = counts.get(fam, 0) + idx.size
            for fam in worst:
                rows.append(GradcheckRow(variant, task, fam, counts[fam], worst[fam]))
    return rows
