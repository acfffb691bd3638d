"""Reversible-jump HMC over decision trees.

Every iteration runs

1. a within-topology block (``k`` NUTS steps, preceded or followed for DF
   by a Metropolis sweep over split dimensions),
2. a grow / prune / stay proposal, with the new node's parameters drawn
   from their priors,
3. a second within-topology block on the proposed tree,

and then accepts or rejects the whole composite move. Before ``n_burnin``
the simplified rule ``pi(x*) q_rev / (pi(x) q_fwd)`` is used; afterwards the
two-sided rule that also weighs the intermediate states, which keeps the
posterior invariant when the blocks target an intermediate density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Literal, Sequence

import numpy as np

from .model import (
    Posterior,
    PriorConfig,
    TreeParams,
    Variant,
    _log_dirichlet,
    log_posterior,
)
from .nuts import (
    AdaptationSchedule,
    ConfigurationError,
    DualAveraging,
    HmcState,
    KeyedMassAdapter,
    NutsDiagnostics,
    build_windows,
    find_reasonable_step_size,
    nuts_step,
    sharpness_at,
)
from .topology import TreeTopology, grow, prunable_count, prunable_nodes, prune

__all__ = [
    "MoveConfig",
    "TreeState",
    "RjProposal",
    "BlockDiagnostics",
    "NutsEngine",
    "ChainSample",
    "draw_node_params",
    "log_aux_density",
    "grow_log_ratio",
    "prune_log_ratio",
    "propose_topology",
    "hmc_block",
    "accept_full",
    "accept_burnin",
    "log_accept_full",
    "log_accept_burnin",
    "initial_state",
    "run_chain",
]

Move = Literal["grow", "prune", "stay"]


@dataclass(frozen=True)
class MoveConfig:
    """Move probabilities, block length ``k`` and the burn-in length.

    ``burnin_probs`` optionally overrides ``(p_grow, p_prune, p_stay)``
    during burn-in. ``df_order`` controls where the DF split-dimension sweep
    sits in a block: ``"random"`` (before or after the NUTS steps with equal
    probability, which keeps the block reversible) or ``"sweep-first"``.
    """

    p_grow: float = 0.35
    p_prune: float = 0.35
    p_stay: float = 0.3
    k: int = 10
    n_burnin: int = 500
    burnin_probs: tuple[float, float, float] | None = None
    df_order: Literal["random", "sweep-first"] = "random"

    def __post_init__(self):
        for probs in (self.sampling_probs, self.burnin_probs):
            if probs is None:
                continue
            if any(p < 0 or p > 1 for p in probs) or abs(sum(probs) - 1.0) > 1e-12:
                raise ConfigurationError(f"move probabilities {probs} must lie in [0, 1] and sum to 1")
        if self.k < 1:
            raise ConfigurationError("k must be >= 1")
        if self.n_burnin < 0:
            raise ConfigurationError("n_burnin must be >= 0")

    @property
    def sampling_probs(self) -> tuple[float, float, float]:
        return (self.p_grow, self.p_prune, self.p_stay)

    def probs(self, burnin: bool) -> tuple[float, float, float]:
        if burnin and self.burnin_probs is not None:
            return self.burnin_probs
        return self.sampling_probs


@dataclass
class TreeState:
    """A tree, its parameters, the sharpness in force and the log posterior there."""

    topo: TreeTopology
    params: TreeParams
    h: float
    logpost: float

    @classmethod
    def evaluate(cls, data, topo, params, h, prior) -> "TreeState":
        return cls(topo, params, float(h), log_posterior(data, topo, params, h, prior))

    def at(self, h: float, data, prior) -> "TreeState":
        """Same tree re-scored at sharpness ``h`` (self when unchanged)."""
        if h == self.h:
            return self
        return TreeState.evaluate(data, self.topo, self.params, h, prior)


@dataclass(frozen=True)
class RjProposal:
    move: Move
    edited_node: int | None = None
    u1: float | None = None  # threshold
    u2: int | np.ndarray | None = None  # split dimension (DF) or simplex (DFI)
    u3: float | None = None  # leaf mean (regression)
    log_proposal_ratio: float = 0.0
    requested: Move | None = None  # differs from ``move`` when a prune became a stay


# ---------------------------------------------------------------------------
# dimension matching
# ---------------------------------------------------------------------------
def draw_node_params(variant: Variant, prior: PriorConfig, regression: bool, rng: np.random.Generator):
    """Prior draws ``(u1, u2, u3)`` for one new split and one new leaf."""
    u1 = float(rng.uniform())
    while not 0.0 < u1 < 1.0:
        u1 = float(rng.uniform())
    if variant == "DF":
        u2 = int(rng.choice(len(prior.index_probs), p=np.asarray(prior.index_probs)))
    else:
        u2 = rng.dirichlet(np.asarray(prior.simplex_alpha))
        u2 = np.clip(u2, 1e-300, None)
        u2 = u2 / u2.sum()
    u3 = None
    if regression:
        m0, v0 = prior.mu_prior
        u3 = float(m0 + math.sqrt(v0) * rng.standard_normal())
    return u1, u2, u3


def log_aux_density(variant: Variant, prior: PriorConfig, u1, u2, u3) -> float:
    """Log prior density of the auxiliary draws (threshold density is 1)."""
    if variant == "DF":
        lp = math.log(prior.index_probs[u2])
    else:
        lp = _log_dirichlet(np.asarray(u2), np.asarray(prior.simplex_alpha, dtype=float))
    if u3 is not None:
        m0, v0 = prior.mu_prior
        lp += -0.5 * math.log(2.0 * math.pi * v0) - 0.5 * (u3 - m0) ** 2 / v0
    return lp


def _log(p: float) -> float:
    return math.log(p) if p > 0.0 else -math.inf


def grow_log_ratio(small: TreeTopology, big: TreeTopology, probs, log_u: float) -> float:
    """``log[p_prune / n_f(big)] - log[p_grow / n_leaves(small) * q(u)]``."""
    p_grow, p_prune, _ = probs
    # a zero move probability makes the reverse move impossible (ratio 0 or inf)
    return (_log(p_prune) - math.log(prunable_count(big))) - (
        _log(p_grow) - math.log(small.n_leaves) + log_u
    )


def prune_log_ratio(big: TreeTopology, small: TreeTopology, probs, log_u: float) -> float:
    """Mirror of :func:`grow_log_ratio` for the prune taking ``big`` to ``small``."""
    return -grow_log_ratio(small, big, probs, log_u)


def propose_topology(
    state: TreeState,
    cfg: MoveConfig,
    prior: PriorConfig,
    rng: np.random.Generator,
    data,
    burnin: bool = False,
) -> tuple[TreeState, RjProposal]:
    """Draw a grow/prune/stay edit of ``state`` and its dimension-matched parameters.

    On grow at leaf ``L`` the leaf becomes a split with threshold ``u1`` and
    split ``u2``; its left child inherits ``L``'s leaf mean and the right
    child takes ``u3``. Prune is the exact inverse (the right child's mean is
    returned as ``u3``). A prune drawn on a tree with no prunable node is
    turned into a stay.
    """
    probs = cfg.probs(burnin)
    move: Move = ("grow", "prune", "stay")[int(rng.choice(3, p=np.asarray(probs)))]
    regression = data.task == "regression"
    variant = state.params.variant
    topo, params = state.topo, state.params

    if move == "prune" and prunable_count(topo) == 0:
        return state, RjProposal("stay", requested="prune")
    if move == "stay":
        return state, RjProposal("stay", requested="stay")

    if move == "grow":
        leaf = topo.leaf_ids[int(rng.integers(topo.n_leaves))]
        u1, u2, u3 = draw_node_params(variant, prior, regression, rng)
        new_topo = grow(topo, leaf)
        node = new_topo[leaf]
        new = params.copy()
        new.tau[leaf] = u1
        if variant == "DF":
            new.kappa[leaf] = u2
        else:
            new.delta[leaf] = u2
        if regression:
            new.mu[node.left] = new.mu.pop(leaf)
            new.mu[node.right] = u3
        log_q = grow_log_ratio(topo, new_topo, probs, log_aux_density(variant, prior, u1, u2, u3))
        prop = RjProposal("grow", leaf, u1, u2, u3, log_q, "grow")
    else:
        candidates = prunable_nodes(topo)
        nid = candidates[int(rng.integers(len(candidates)))]
        node = topo[nid]
        new_topo = prune(topo, nid)
        new = params.copy()
        u1 = new.tau.pop(nid)
        u2 = new.kappa.pop(nid) if variant == "DF" else new.delta.pop(nid)
        u3 = None
        if regression:
            new.mu[nid] = new.mu.pop(node.left)
            u3 = new.mu.pop(node.right)
        log_q = prune_log_ratio(topo, new_topo, probs, log_aux_density(variant, prior, u1, u2, u3))
        prop = RjProposal("prune", nid, u1, u2, u3, log_q, "prune")
    return TreeState.evaluate(data, new_topo, new, state.h, prior), prop


# ---------------------------------------------------------------------------
# within-topology block
# ---------------------------------------------------------------------------
class NutsEngine:
    """Step size and keyed diagonal mass shared by all NUTS calls of one chain.

    During the first ``n_warmup`` outer iterations the step size is dual
    averaged over every NUTS transition and the inverse mass is estimated
    per coordinate key inside the slow windows; the sharpness follows the
    linear annealing plan. Afterwards everything is frozen and ``h`` equals
    ``h_final``.
    """

    def __init__(
        self,
        n_warmup: int = 0,
        h_init: float = 0.01,
        h_final: float = 0.01,
        step_size: float = 0.1,
        target_accept: float = 0.8,
        max_depth: int = 10,
        max_delta_h: float = 1000.0,
        adapt: bool = True,
        mass_fallback: str = "median",
    ):
        self.n_warmup = n_warmup if adapt else 0
        self.h_init = h_init
        self.h_final = h_final
        self.target_accept = target_accept
        self.max_depth = max_depth
        self.max_delta_h = max_delta_h
        self.windows = build_windows(n_warmup) if adapt and n_warmup >= 20 else None
        self.da = DualAveraging(step_size, target_accept)
        self.mass = KeyedMassAdapter(fallback=mass_fallback)
        self.step_size = step_size
        self.needs_init = adapt and n_warmup > 0

    def adapting(self, iteration: int) -> bool:
        return iteration < self.n_warmup

    def h_at(self, iteration: int) -> float:
        if not self.adapting(iteration):
            return self.h_final
        return sharpness_at(iteration, self.windows, self.h_init, self.h_final)

    def schedule(self, keys: Sequence, iteration: int) -> AdaptationSchedule:
        eps = self.da.step_size if self.adapting(iteration) else self.step_size
        return AdaptationSchedule(
            eps, self.mass.lookup(keys), self.target_accept,
            max_depth=self.max_depth, max_delta_h=self.max_delta_h,
        )

    def initialise(self, hs: HmcState, fn, keys, rng) -> None:
        """Pick a starting step size by the doubling heuristic (once per chain)."""
        if self.needs_init and hs.dim:
            eps = find_reasonable_step_size(hs, fn, self.mass.lookup(keys), rng, self.step_size)
            self.da.restart(eps)
            self.needs_init = False

    def record(self, keys, position: np.ndarray, diag: NutsDiagnostics, iteration: int) -> None:
        if not self.adapting(iteration):
            return
        self.da.update(diag.accept_stat)
        if self.windows is not None and self.windows.in_slow(iteration):
            self.mass.observe(keys, position)

    def end_iteration(self, iteration: int) -> None:
        if not self.adapting(iteration):
            return
        if self.windows is not None and self.windows.window_end(iteration):
            self.mass.end_window()
            self.da.restart(self.da.step_size)
        if iteration == self.n_warmup - 1:
            self.step_size = self.da.final_step_size


@dataclass
class BlockDiagnostics:
    n_nuts: int = 0
    n_divergent: int = 0
    n_leapfrog: int = 0
    mean_accept_stat: float = float("nan")
    kappa_accepts: int = 0
    kappa_proposals: int = 0


def _kappa_sweep(post: Posterior, u: np.ndarray, rng, diag: BlockDiagnostics) -> Posterior:
    n_x = post.X.shape[1]
    internal = post.ct.internal
    if n_x < 2 or not internal:
        return post
    lp = post.logp(u)
    kappa = dict(post.template.kappa)
    for idx in rng.permutation(len(internal)):
        nid = internal[idx]
        proposal = int(rng.integers(n_x))
        diag.kappa_proposals += 1
        if proposal == kappa[nid]:
            diag.kappa_accepts += 1
            continue
        trial = dict(kappa)
        trial[nid] = proposal
        cand = post.with_kappa(trial)
        lp_new = cand.logp(u)
        if math.log(rng.uniform()) < lp_new - lp:
            post, kappa, lp = cand, trial, lp_new
            diag.kappa_accepts += 1
    return post


def hmc_block(
    state: TreeState,
    k: int,
    engine: NutsEngine,
    rng: np.random.Generator,
    data,
    prior: PriorConfig,
    iteration: int = 0,
    df_order: str = "random",
) -> tuple[TreeState, BlockDiagnostics]:
    """``k`` NUTS steps on the continuous parameters at fixed topology and ``h``.

    For DF a Metropolis sweep over split dimensions (random node order,
    uniform redraw per node) runs before or after the NUTS steps.
    """
    diag = BlockDiagnostics()
    post = Posterior(data, state.topo, state.params, state.h, prior)
    if post.dim == 0:
        return state, diag
    u = post.pack(state.params)
    sweep_first = state.params.variant == "DF" and (df_order == "sweep-first" or rng.random() < 0.5)
    sweep_after = state.params.variant == "DF" and not sweep_first
    if sweep_first:
        post = _kappa_sweep(post, u, rng, diag)
    keys = post.layout.keys
    hs = HmcState.from_fn(u, post)
    engine.initialise(hs, post, keys, rng)
    accepts = []
    for _ in range(k):
        sched = engine.schedule(keys, iteration)
        hs, d = nuts_step(hs, sched, post, rng)
        engine.record(keys, hs.position, d, iteration)
        diag.n_nuts += 1
        diag.n_divergent += int(d.divergent)
        diag.n_leapfrog += d.n_leapfrog
        accepts.append(d.accept_stat)
    diag.mean_accept_stat = float(np.mean(accepts))
    if sweep_after:
        post = _kappa_sweep(post, hs.position, rng, diag)
    params = post.unpack(hs.position)
    return TreeState.evaluate(data, state.topo, params, state.h, prior), diag


# ---------------------------------------------------------------------------
# acceptance
# ---------------------------------------------------------------------------
def log_accept_full(
    pi_x: float, pi_star_x: float, pi_star_x1: float, pi_star_x2: float,
    pi_star_x3: float, pi_x3: float, log_q: float,
) -> float:
    """Log of the two-sided acceptance ratio (before clamping at 0).

    ``x`` is the start, ``x1`` the end of the first block, ``x2`` the
    dimension-jumped state and ``x3`` the end of the second block; ``pi`` is
    the target and ``pi_star`` the density the blocks run on.
    """
    return (pi_x3 + pi_star_x2 + pi_star_x) - (pi_x + pi_star_x3 + pi_star_x1) + log_q


def log_accept_burnin(pi_x: float, pi_x3: float, log_q: float) -> float:
    return pi_x3 - pi_x + log_q


def _clamp(log_a: float) -> float:
    if log_a != log_a:
        return 0.0
    return 1.0 if log_a >= 0.0 else math.exp(log_a)


def accept_full(initial: TreeState, x1: TreeState, x2: TreeState, final: TreeState,
                proposal: RjProposal, pi_initial: float | None = None, pi_final: float | None = None) -> float:
    """Acceptance probability of the two-sided rule.

    ``pi_initial``/``pi_final`` are target log densities of ``initial`` and
    ``final``; when omitted the intermediate density is taken as the target.
    """
    pi_x = initial.logpost if pi_initial is None else pi_initial
    pi_x3 = final.logpost if pi_final is None else pi_final
    return _clamp(log_accept_full(pi_x, initial.logpost, x1.logpost, x2.logpost, final.logpost, pi_x3,
                                  proposal.log_proposal_ratio))


def accept_burnin(initial: TreeState, final: TreeState, proposal: RjProposal,
                  pi_initial: float | None = None, pi_final: float | None = None) -> float:
    pi_x = initial.logpost if pi_initial is None else pi_initial
    pi_x3 = final.logpost if pi_final is None else pi_final
    return _clamp(log_accept_burnin(pi_x, pi_x3, proposal.log_proposal_ratio))


# ---------------------------------------------------------------------------
# chain
# ---------------------------------------------------------------------------
@dataclass
class ChainSample:
    iteration: int
    topo: TreeTopology
    params: TreeParams
    logpost: float
    move: Move
    accepted: bool
    phase: Literal["burn-in", "sampling"]
    h: float = float("nan")
    accept_prob: float = float("nan")
    requested_move: Move | None = None
    n_divergent: int = 0
    n_leapfrog: int = 0
    step_size: float = float("nan")

    @property
    def n_leaves(self) -> int:
        return self.topo.n_leaves


def initial_state(data, variant: Variant, prior: PriorConfig, h: float, rng: np.random.Generator) -> TreeState:
    """Root-only tree with leaf parameters drawn from the prior."""
    topo = TreeTopology.root_only()
    params = TreeParams(variant)
    if data.task == "regression":
        m0, v0 = prior.mu_prior
        a, b = prior.sigma_prior
        params.mu = {topo.root: float(m0 + math.sqrt(v0) * rng.standard_normal())}
        params.sigma = float(b / rng.gamma(a))
    return TreeState.evaluate(data, topo, params, h, prior)


def run_chain(
    data,
    init: TreeState,
    cfg: MoveConfig,
    prior: PriorConfig,
    engine: NutsEngine,
    n_iter: int,
    rng: np.random.Generator,
    callback: Callable[[ChainSample], None] | None = None,
    keep: bool = True,
) -> list[ChainSample]:
    """Run ``n_iter`` composite iterations from ``init``.

    Every post-decision state is reported to ``callback`` and, when
    ``keep``, returned. A rejected iteration restores the pre-iteration
    state object unchanged.
    """
    if n_iter < 1:
        raise ConfigurationError("n_iter must be >= 1")
    out: list[ChainSample] = []
    state = init
    for i in range(n_iter):
        burnin = i < cfg.n_burnin
        h = engine.h_at(i)
        x = state.at(h, data, prior)
        x1, d1 = hmc_block(x, cfg.k, engine, rng, data, prior, i, cfg.df_order)
        x2, prop = propose_topology(x1, cfg, prior, rng, data, burnin)
        x3, d2 = hmc_block(x2, cfg.k, engine, rng, data, prior, i, cfg.df_order)
        h_target = engine.h_final
        pi_x = x.logpost if h == h_target else state.at(h_target, data, prior).logpost
        pi_x3 = x3.logpost if h == h_target else x3.at(h_target, data, prior).logpost
        if burnin:
            log_a = log_accept_burnin(pi_x, pi_x3, prop.log_proposal_ratio)
        else:
            log_a = log_accept_full(pi_x, x.logpost, x1.logpost, x2.logpost, x3.logpost, pi_x3,
                                    prop.log_proposal_ratio)
        a = _clamp(log_a)
        accepted = a >= 1.0 or rng.uniform() < a
        if accepted:
            state = x3
        engine.end_iteration(i)
        sample = ChainSample(
            i, state.topo, state.params, state.logpost, prop.move, accepted,
            "burn-in" if burnin else "sampling", state.h, a, prop.requested,
            d1.n_divergent + d2.n_divergent, d1.n_leapfrog + d2.n_leapfrog,
            engine.schedule((), i).step_size,
        )
        if callback is not None:
            callback(sample)
        if keep:
            out.append(sample)
    return out
