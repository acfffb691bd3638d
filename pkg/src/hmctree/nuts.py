"""No-U-Turn sampler over flat unconstrained vectors, with warm-up adaptation.

The transition is the multinomial variant with the generalised U-turn
criterion (including the checks that straddle the two halves of every
subtree). Warm-up follows the usual three-phase window layout: a fast
initial window for the step size only, a run of doubling slow windows that
also estimate a diagonal inverse mass, and a fast terminal window.

The split sharpness ``h`` is not part of the sampled state. It is a
parameter of the potential, chosen per warm-up iteration by
:meth:`AdaptationSchedule.h_at` and held fixed within each trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Sequence

import numpy as np

__all__ = [
    "ConfigurationError",
    "HmcState",
    "NutsDiagnostics",
    "AdaptationSchedule",
    "DualAveraging",
    "Welford",
    "KeyedMassAdapter",
    "WarmupWindows",
    "build_windows",
    "sharpness_at",
    "leapfrog",
    "nuts_step",
    "warmup_adapt",
]

LogpFn = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


class ConfigurationError(ValueError):
    """Raised for warm-up settings that cannot be honoured."""


@dataclass
class HmcState:
    position: np.ndarray
    logpost: float
    grad: np.ndarray

    @classmethod
    def from_fn(cls, position: np.ndarray, fn: LogpFn) -> "HmcState":
        position = np.asarray(position, dtype=float)
        lp, g = fn(position)
        return cls(position, float(lp), np.asarray(g, dtype=float))

    @property
    def dim(self) -> int:
        return self.position.shape[0]


@dataclass
class NutsDiagnostics:
    tree_depth: int
    divergent: bool
    accept_stat: float
    energy: float
    n_leapfrog: int = 0
    step_size: float = float("nan")


# ---------------------------------------------------------------------------
# warm-up windows and the sharpness schedule
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class WarmupWindows:
    """Iteration layout of a warm-up phase of ``n_warmup`` iterations.

    ``slow`` lists the half-open ``[start, end)`` mass-adaptation windows;
    ``w1`` is the end of the initial fast window and ``w_minus2`` the start
    of the terminal fast window.
    """

    n_warmup: int
    w1: int
    w_minus2: int
    slow: tuple[tuple[int, int], ...]

    @property
    def boundaries(self) -> tuple[int, ...]:
        return tuple([self.w1] + [end for _, end in self.slow] + [self.n_warmup])

    def window_end(self, j: int) -> bool:
        """True when iteration ``j`` is the last one of a slow window."""
        return any(j == end - 1 for _, end in self.slow)

    def in_slow(self, j: int) -> bool:
        return self.w1 <= j < self.w_minus2


def build_windows(n_warmup: int, init_buffer: int = 75, term_buffer: int = 50, base_window: int = 25) -> WarmupWindows:
    if n_warmup < 20:
        raise ConfigurationError(f"warm-up of {n_warmup} iterations is too short for windowed adaptation (need >= 20)")
    if init_buffer + term_buffer + base_window > n_warmup:
        init_buffer = int(0.15 * n_warmup)
        term_buffer = int(0.1 * n_warmup)
        base_window = n_warmup - init_buffer - term_buffer
    w_minus2 = n_warmup - term_buffer
    slow: list[tuple[int, int]] = []
    start, size = init_buffer, base_window
    while start < w_minus2:
        end = start + size
        # a window that would leave less than twice its successor is stretched to the end
        if end + 2 * size > w_minus2:
            end = w_minus2
        slow.append((start, end))
        start, size = end, 2 * size
    return WarmupWindows(n_warmup, init_buffer, w_minus2, tuple(slow))


def sharpness_at(j: int, windows: WarmupWindows | None, h_init: float, h_final: float, offset: int = 100) -> float:
    """Split sharpness for warm-up iteration ``j`` (linear annealing).

    ``h_init`` before ``w1``; ``h_init + j (h_final - h_init) / l_w`` while
    ``w1 <= j <= w_minus2 - offset``; ``h_final`` afterwards, with
    ``l_w = w_minus2 - w1 + offset``. The offset is clamped to the length of
    the slow phase when warm-up is short.
    """
    if windows is None or j >= windows.n_warmup:
        return h_final
    if j < windows.w1:
        return h_init
    off = min(offset, windows.w_minus2 - windows.w1)
    if j <= windows.w_minus2 - off:
        ell = windows.w_minus2 - windows.w1 + off
        return h_init + j * (h_final - h_init) / ell
    return h_final


@dataclass
class AdaptationSchedule:
    """Current step size, diagonal inverse mass and sharpness plan."""

    step_size: float
    inv_mass: np.ndarray
    target_accept: float = 0.8
    windows: WarmupWindows | None = None
    h_init: float = 1.0
    h_final: float = 1.0
    max_depth: int = 10
    max_delta_h: float = 1000.0

    def __post_init__(self):
        if not self.step_size > 0:
            raise ConfigurationError("step size must be positive")
        if np.any(np.asarray(self.inv_mass) <= 0):
            raise ConfigurationError("inverse mass must be positive")
        if not 0.0 < self.target_accept < 1.0:
            raise ConfigurationError("target_accept must lie in (0, 1)")

    @property
    def ell_w(self) -> int | None:
        if self.windows is None:
            return None
        off = min(100, self.windows.w_minus2 - self.windows.w1)
        return self.windows.w_minus2 - self.windows.w1 + off

    def h_at(self, j: int) -> float:
        return sharpness_at(j, self.windows, self.h_init, self.h_final)


# ---------------------------------------------------------------------------
# adaptation primitives
# ---------------------------------------------------------------------------
class DualAveraging:
    """Nesterov dual averaging of ``log(step_size)`` towards a target accept rate."""

    def __init__(self, step_size: float, target: float = 0.8, gamma: float = 0.05, t0: float = 10.0, kappa: float = 0.75):
        self.target = target
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.restart(step_size)

    def restart(self, step_size: float) -> None:
        self.mu = math.log(10.0 * step_size)
        self.s_bar = 0.0
        self.x_bar = 0.0
        self.counter = 0
        self.step_size = step_size

    def update(self, accept_stat: float) -> float:
        self.counter += 1
        a = min(1.0, accept_stat) if accept_stat == accept_stat else 0.0
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - a)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        w = self.counter ** (-self.kappa)
        self.x_bar = w * x + (1.0 - w) * self.x_bar
        self.step_size = math.exp(x)
        return self.step_size

    @property
    def final_step_size(self) -> float:
        return math.exp(self.x_bar) if self.counter else self.step_size


class Welford:
    """Streaming mean/variance; ``regularized`` shrinks towards 1e-3 like Stan."""

    __slots__ = ("n", "mean", "m2")

    def __init__(self, dim: int | None = None):
        self.n = 0
        self.mean = 0.0 if dim is None else np.zeros(dim)
        self.m2 = 0.0 if dim is None else np.zeros(dim)

    def add(self, x) -> None:
        self.n += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.n
        self.m2 = self.m2 + delta * (x - self.mean)

    def variance(self):
        return self.m2 / (self.n - 1)

    def regularized(self):
        n = self.n
        return (n / (n + 5.0)) * self.variance() + 1e-3 * (5.0 / (n + 5.0))


class KeyedMassAdapter:
    """Diagonal inverse mass indexed by coordinate name rather than position.

    Coordinates are identified by hashable keys (for example ``("tau", 3)``)
    so the estimate survives changes in which coordinates exist. Keys never
    seen in a completed window fall back to the median of their kind (the
    first key element), then to 1; with ``fallback="unit"`` they use 1
    directly, the usual starting metric.
    """

    def __init__(self, min_count: int = 5, fallback: str = "median"):
        if fallback not in ("median", "unit"):
            raise ConfigurationError(f"unknown mass fallback {fallback!r}")
        self.min_count = min_count
        self.fallback = fallback
        self.inv_mass: dict[Hashable, float] = {}
        self._acc: dict[Hashable, Welford] = {}

    def lookup(self, keys: Sequence[Hashable]) -> np.ndarray:
        out = np.empty(len(keys))
        medians: dict[Hashable, float] = {}
        for i, key in enumerate(keys):
            v = self.inv_mass.get(key)
            if v is None and self.fallback == "unit":
                v = 1.0
            elif v is None:
                kind = key[0] if isinstance(key, tuple) else key
                if kind not in medians:
                    vals = [m for k, m in self.inv_mass.items() if (k[0] if isinstance(k, tuple) else k) == kind]
                    medians[kind] = float(np.median(vals)) if vals else 1.0
                v = medians[kind]
            out[i] = v
        return out

    def observe(self, keys: Iterable[Hashable], position: np.ndarray) -> None:
        for key, x in zip(keys, position):
            acc = self._acc.get(key)
            if acc is None:
                acc = self._acc[key] = Welford()
            acc.add(float(x))

    def end_window(self) -> None:
        for key, acc in self._acc.items():
            if acc.n >= self.min_count:
                self.inv_mass[key] = float(acc.regularized())
        self._acc = {}


# ---------------------------------------------------------------------------
# integrator and transition
# ---------------------------------------------------------------------------
def leapfrog(state: HmcState, momentum: np.ndarray, step_size: float, inv_mass: np.ndarray, fn: LogpFn):
    """One half-kick / drift / half-kick step; returns the new state and momentum.

    A non-finite log density or gradient yields a state with ``logpost = -inf``,
    which the caller treats as a divergence.
    """
    p = momentum + 0.5 * step_size * state.grad
    q = state.position + step_size * inv_mass * p
    lp, g = fn(q)
    lp = float(lp)
    if not (math.isfinite(lp) and np.all(np.isfinite(g))):
        return HmcState(q, -math.inf, np.zeros_like(q)), p
    p = p + 0.5 * step_size * g
    return HmcState(q, lp, g), p


def _logaddexp(a: float, b: float) -> float:
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@dataclass
class _Subtree:
    valid: bool
    sample: HmcState
    end_state: HmcState
    end_p: np.ndarray
    p_beg: np.ndarray
    p_end: np.ndarray
    ps_beg: np.ndarray  # velocity (inv_mass * p) at the first state
    ps_end: np.ndarray
    rho: np.ndarray
    log_weight: float


class _Trajectory:
    """Mutable counters shared by the recursive subtree builder."""

    def __init__(self, fn, step_size, inv_mass, H0, max_delta_h, rng):
        self.fn = fn
        self.eps = step_size
        self.inv_mass = inv_mass
        self.H0 = H0
        self.max_delta_h = max_delta_h
        self.rng = rng
        self.n_leapfrog = 0
        self.sum_metro = 0.0
        self.divergent = False

    def hamiltonian(self, state: HmcState, p: np.ndarray) -> float:
        return -state.logpost + 0.5 * float(p @ (self.inv_mass * p))

    def build(self, depth: int, state: HmcState, p: np.ndarray, sign: int) -> _Subtree:
        if depth == 0:
            new, p_new = leapfrog(state, p, sign * self.eps, self.inv_mass, self.fn)
            self.n_leapfrog += 1
            H = self.hamiltonian(new, p_new) if math.isfinite(new.logpost) else math.inf
            if H != H:
                H = math.inf
            if H - self.H0 > self.max_delta_h:
                self.divergent = True
            log_w = self.H0 - H
            self.sum_metro += 1.0 if log_w > 0 else math.exp(log_w)
            ps = self.inv_mass * p_new
            return _Subtree(not self.divergent, new, new, p_new, p_new, p_new, ps, ps, p_new.copy(), log_w)

        left = self.build(depth - 1, state, p, sign)
        if not left.valid:
            return left
        right = self.build(depth - 1, left.end_state, left.end_p, sign)
        if not right.valid:
            return right
        log_w = _logaddexp(left.log_weight, right.log_weight)
        sample = left.sample
        if self.rng.random() < math.exp(right.log_weight - log_w):
            sample = right.sample
        rho = left.rho + right.rho
        ok = _no_uturn(left.ps_beg, right.ps_end, rho)
        ok = ok and _no_uturn(left.ps_beg, right.ps_beg, left.rho + right.p_beg)
        ok = ok and _no_uturn(left.ps_end, right.ps_end, right.rho + left.p_end)
        return _Subtree(
            ok, sample, right.end_state, right.end_p, left.p_beg, right.p_end,
            left.ps_beg, right.ps_end, rho, log_w,
        )


def _no_uturn(ps_minus: np.ndarray, ps_plus: np.ndarray, rho: np.ndarray) -> bool:
    return float(ps_plus @ rho) > 0.0 and float(ps_minus @ rho) > 0.0


def nuts_step(state: HmcState, schedule: AdaptationSchedule, fn: LogpFn, rng: np.random.Generator):
    """One multinomial NUTS transition from ``state``.

    Subtrees of depth ``0 .. max_depth`` are appended in random directions
    until a U-turn, a divergence or the depth cap; ``max_depth = 0`` is
    therefore a single leapfrog step with a Metropolis correction.
    """
    if state.dim == 0:
        return state, NutsDiagnostics(0, False, 1.0, -state.logpost, 0, schedule.step_size)
    inv_mass = np.asarray(schedule.inv_mass, dtype=float)
    p0 = rng.standard_normal(state.dim) / np.sqrt(inv_mass)
    traj = _Trajectory(fn, schedule.step_size, inv_mass, 0.0, schedule.max_delta_h, rng)
    H0 = traj.hamiltonian(state, p0)
    traj.H0 = H0

    ps0 = inv_mass * p0
    minus_state, minus_p = state, p0
    plus_state, plus_p = state, p0
    # momentum and velocity at the two trajectory ends
    p_bck, ps_bck = p0, ps0
    p_fwd, ps_fwd = p0, ps0
    rho = p0.copy()
    log_w = 0.0
    sample = state
    depth = 0
    while depth <= schedule.max_depth:
        if rng.random() < 0.5:
            sub = traj.build(depth, plus_state, plus_p, +1)
            if not sub.valid:
                break
            plus_state, plus_p = sub.end_state, sub.end_p
            rho_bck, rho_fwd = rho, sub.rho
            p_bck_fwd, ps_bck_fwd = p_fwd, ps_fwd  # innermost ends at the junction
            p_fwd_bck, ps_fwd_bck = sub.p_beg, sub.ps_beg
            p_fwd, ps_fwd = sub.p_end, sub.ps_end
        else:
            sub = traj.build(depth, minus_state, minus_p, -1)
            if not sub.valid:
                break
            minus_state, minus_p = sub.end_state, sub.end_p
            rho_bck, rho_fwd = sub.rho, rho
            p_bck_fwd, ps_bck_fwd = sub.p_beg, sub.ps_beg
            p_fwd_bck, ps_fwd_bck = p_bck, ps_bck
            p_bck, ps_bck = sub.p_end, sub.ps_end
        tree_depth = depth
        depth += 1
        # biased progressive sampling favours the newly built half
        if sub.log_weight > log_w or rng.random() < math.exp(sub.log_weight - log_w):
            sample = sub.sample
        log_w = _logaddexp(log_w, sub.log_weight)
        rho = rho_bck + rho_fwd
        if not (
            _no_uturn(ps_bck, ps_fwd, rho)
            and _no_uturn(ps_bck, ps_fwd_bck, rho_bck + p_fwd_bck)
            and _no_uturn(ps_bck_fwd, ps_fwd, rho_fwd + p_bck_fwd)
        ):
            break
    else:
        tree_depth = schedule.max_depth
    if depth == 0:
        tree_depth = 0
    accept = traj.sum_metro / max(traj.n_leapfrog, 1)
    energy = -sample.logpost
    return sample, NutsDiagnostics(
        min(tree_depth, schedule.max_depth), traj.divergent, accept, energy, traj.n_leapfrog, schedule.step_size
    )


# ---------------------------------------------------------------------------
# fixed-dimension warm-up
# ---------------------------------------------------------------------------
def find_reasonable_step_size(state: HmcState, fn: LogpFn, inv_mass: np.ndarray, rng, step_size: float = 1.0) -> float:
    """Double or halve the step size until one leapfrog step crosses accept 0.8."""
    if state.dim == 0:
        return step_size
    p = rng.standard_normal(state.dim) / np.sqrt(inv_mass)
    H0 = -state.logpost + 0.5 * float(p @ (inv_mass * p))

    def log_accept(eps):
        new, pn = leapfrog(state, p, eps, inv_mass, fn)
        if not math.isfinite(new.logpost):
            return -math.inf
        return H0 - (-new.logpost + 0.5 * float(pn @ (inv_mass * pn)))

    direction = 1 if log_accept(step_size) > math.log(0.8) else -1
    for _ in range(60):
        step_size = step_size * (2.0 if direction == 1 else 0.5)
        la = log_accept(step_size)
        if (direction == 1 and not la > math.log(0.8)) or (direction == -1 and la > math.log(0.8)):
            break
    return step_size


def warmup_adapt(
    state: HmcState,
    fn: LogpFn,
    n_warmup: int,
    rng: np.random.Generator,
    target_accept: float = 0.8,
    max_depth: int = 10,
    init_step_size: float = 1.0,
) -> tuple[HmcState, AdaptationSchedule, list[NutsDiagnostics]]:
    """Run ``n_warmup`` adaptive NUTS steps on a fixed-dimension target.

    Returns the final state, a frozen schedule (dual-averaged step size and
    windowed diagonal inverse mass) and the warm-up diagnostics.
    """
    windows = build_windows(n_warmup)
    inv_mass = np.ones(state.dim)
    eps = find_reasonable_step_size(state, fn, inv_mass, rng, init_step_size)
    da = DualAveraging(eps, target_accept)
    welford = Welford(state.dim)
    diags: list[NutsDiagnostics] = []
    schedule = AdaptationSchedule(eps, inv_mass, target_accept, windows, max_depth=max_depth)
    for j in range(n_warmup):
        schedule.step_size = da.step_size
        state, diag = nuts_step(state, schedule, fn, rng)
        diags.append(diag)
        da.update(diag.accept_stat)
        if windows.in_slow(j):
            welford.add(state.position)
            if windows.window_end(j):
                schedule.inv_mass = np.asarray(welford.regularized(), dtype=float)
                welford = Welford(state.dim)
                eps = find_reasonable_step_size(state, fn, schedule.inv_mass, rng, da.step_size)
                da.restart(eps)
    schedule.step_size = da.final_step_size
    return state, schedule, diags
