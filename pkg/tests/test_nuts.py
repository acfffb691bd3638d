import math

import numpy as np
import pytest

from hmctree.nuts import (
    AdaptationSchedule,
    ConfigurationError,
    HmcState,
    KeyedMassAdapter,
    build_windows,
    leapfrog,
    nuts_step,
    sharpness_at,
    warmup_adapt,
)


def gaussian(var):
    var = np.asarray(var, dtype=float)

    def fn(q):
        return float(-0.5 * np.sum(q * q / var)), -q / var

    return fn


def banana(q):
    x, y = q
    b = 0.5
    r = y - b * (x * x - 1.0)
    lp = -0.5 * x * x - 0.5 * r * r
    return lp, np.array([-x + r * 2 * b * x, -r])


def test_leapfrog_harmonic_recurrence():
    fn = gaussian([1.0])
    eps = 0.3
    q, p = np.array([0.7]), np.array([-0.4])
    state, mom = HmcState.from_fn(q, fn), p.copy()
    for _ in range(5):
        ph = p - 0.5 * eps * q
        q = q + eps * ph
        p = ph - 0.5 * eps * q
        state, mom = leapfrog(state, mom, eps, np.ones(1), fn)
        np.testing.assert_allclose(state.position, q, rtol=0, atol=1e-15)
        np.testing.assert_allclose(mom, p, rtol=0, atol=1e-15)


def test_leapfrog_free_particle():
    fn = lambda q: (0.0, np.zeros_like(q))  # noqa: E731
    state = HmcState.from_fn(np.array([1.0, 2.0]), fn)
    new, p = leapfrog(state, np.array([0.5, -1.0]), 0.1, np.array([2.0, 3.0]), fn)
    np.testing.assert_array_equal(new.position, [1.0 + 0.1 * 2 * 0.5, 2.0 - 0.1 * 3.0])
    np.testing.assert_array_equal(p, [0.5, -1.0])


def test_leapfrog_reversible():
    rng = np.random.default_rng(0)
    for _ in range(20):
        q0, p0 = rng.normal(size=2), rng.normal(size=2)
        s = HmcState.from_fn(q0, banana)
        p = p0
        for _ in range(10):
            s, p = leapfrog(s, p, 0.05, np.ones(2), banana)
        p = -p
        for _ in range(10):
            s, p = leapfrog(s, p, 0.05, np.ones(2), banana)
        np.testing.assert_allclose(s.position, q0, atol=1e-10)
        np.testing.assert_allclose(-p, p0, atol=1e-10)


def test_leapfrog_preserves_volume():
    inv_mass = np.array([1.0, 0.5])

    def step(z):
        s = HmcState.from_fn(z[:2], banana)
        new, p = leapfrog(s, z[2:], 0.1, inv_mass, banana)
        return np.concatenate([new.position, p])

    z0 = np.array([0.3, -0.2, 0.5, 1.1])
    J = np.empty((4, 4))
    for i in range(4):
        e = np.zeros(4)
        e[i] = 1e-6
        J[:, i] = (step(z0 + e) - step(z0 - e)) / 2e-6
    assert abs(np.linalg.det(J) - 1.0) < 1e-6


def test_non_finite_gradient_is_divergent():
    def fn(q):
        if q[0] > 0.05:
            return -math.inf, np.zeros(1)
        return -0.5 * float(q @ q), -q

    state = HmcState.from_fn(np.zeros(1), fn)
    sched = AdaptationSchedule(1.0, np.ones(1))
    rng = np.random.default_rng(0)
    flags = [nuts_step(state, sched, fn, rng)[1].divergent for _ in range(50)]
    assert any(flags)
    # the position is never left at an invalid point
    for _ in range(50):
        s, _ = nuts_step(state, sched, fn, rng)
        assert math.isfinite(s.logpost)


def test_gaussian_moments():
    fn = gaussian([1.0, 1.0])
    state = HmcState.from_fn(np.zeros(2), fn)
    sched = AdaptationSchedule(0.8, np.ones(2))
    rng = np.random.default_rng(1)
    draws = np.empty((5000, 2))
    for i in range(5000):
        state, _ = nuts_step(state, sched, fn, rng)
        draws[i] = state.position
    np.testing.assert_allclose(draws.mean(axis=0), 0.0, atol=0.05)
    np.testing.assert_allclose(draws.std(axis=0), 1.0, atol=0.05)


def _batch_means_se(x, n_batches=50):
    b = np.array_split(x, n_batches)
    means = np.array([c.mean() for c in b])
    return means.std(ddof=1) / math.sqrt(n_batches)


def test_banana_matches_random_walk_reference():
    rng = np.random.default_rng(2)
    # long random-walk Metropolis reference for E[x^2 + y^2]
    q = np.zeros(2)
    lp = banana(q)[0]
    ref = np.empty(400_000)
    steps = rng.normal(0, 0.9, size=(ref.size, 2))
    logu = np.log(rng.uniform(size=ref.size))
    for i in range(ref.size):
        cand = q + steps[i]
        lc = banana(cand)[0]
        if logu[i] < lc - lp:
            q, lp = cand, lc
        ref[i] = q @ q
    state = HmcState.from_fn(np.zeros(2), banana)
    sched = AdaptationSchedule(0.4, np.ones(2))
    stat = np.empty(6000)
    for i in range(stat.size):
        state, _ = nuts_step(state, sched, banana, rng)
        stat[i] = state.position @ state.position
    se = math.hypot(_batch_means_se(ref), _batch_means_se(stat))
    assert abs(stat.mean() - ref.mean()) < 3 * se


def test_max_depth_zero_is_single_leapfrog():
    fn = gaussian([1.0])
    sched = AdaptationSchedule(1.2, np.ones(1), max_depth=0)
    rng = np.random.default_rng(3)
    state = HmcState.from_fn(np.zeros(1), fn)
    draws = []
    for _ in range(20000):
        state, d = nuts_step(state, sched, fn, rng)
        assert d.n_leapfrog == 1 and d.tree_depth == 0
        draws.append(state.position[0])
    draws = np.array(draws)
    assert abs(draws.mean()) < 0.06
    assert abs(draws.var() - 1.0) < 0.08


def test_detailed_balance_on_binned_target():
    # stationary transition counts between bins must be symmetric
    fn = gaussian([1.0])
    sched = AdaptationSchedule(0.9, np.ones(1), max_depth=3)
    rng = np.random.default_rng(4)
    state = HmcState.from_fn(np.zeros(1), fn)
    edges = np.array([-np.inf, -1.0, 0.0, 1.0, np.inf])
    counts = np.zeros((4, 4))
    prev = int(np.searchsorted(edges, state.position[0]) - 1)
    for _ in range(100_000):
        state, _ = nuts_step(state, sched, fn, rng)
        cur = int(np.searchsorted(edges, state.position[0]) - 1)
        counts[prev, cur] += 1
        prev = cur
    for a in range(4):
        for b in range(a + 1, 4):
            n_ab, n_ba = counts[a, b], counts[b, a]
            # under symmetry n_ab ~ Binomial(n_ab + n_ba, 1/2)
            z = (n_ab - n_ba) / math.sqrt(max(n_ab + n_ba, 1.0))
            assert abs(z) < 4.0


def test_warmup_scales_and_accept_rate():
    fn = gaussian([1.0, 100.0])
    rng = np.random.default_rng(5)
    state = HmcState.from_fn(np.array([0.5, 5.0]), fn)
    state, sched, diags = warmup_adapt(state, fn, 1000, rng)
    ratio = sched.inv_mass[1] / sched.inv_mass[0]
    assert 50 <= ratio <= 200
    assert abs(np.mean([d.accept_stat for d in diags[500:]]) - 0.8) < 0.05
    energies = []
    for _ in range(500):
        p = rng.standard_normal(2) / np.sqrt(sched.inv_mass)
        H0 = -state.logpost + 0.5 * float(p @ (sched.inv_mass * p))
        new, pn = leapfrog(state, p, sched.step_size, sched.inv_mass, fn)
        energies.append(abs(-new.logpost + 0.5 * float(pn @ (sched.inv_mass * pn)) - H0))
        state, _ = nuts_step(state, sched, fn, rng)
    assert np.median(energies) < 0.2


def test_warmup_too_short():
    with pytest.raises(ConfigurationError):
        build_windows(10)


def test_sharpness_schedule():
    w = build_windows(1000)
    assert (w.w1, w.w_minus2) == (75, 950)
    for j in range(0, 1000, 7):
        assert sharpness_at(j, w, 0.02, 0.02) == 0.02
    for j in range(w.w1):
        assert sharpness_at(j, w, 0.1, 0.01) == 0.1
    ell = w.w_minus2 - w.w1 + 100
    j = 400
    assert sharpness_at(j, w, 0.1, 0.01) == pytest.approx(0.1 + j * (0.01 - 0.1) / ell)
    assert sharpness_at(w.w_minus2 - 99, w, 0.1, 0.01) == 0.01
    assert sharpness_at(5000, w, 0.1, 0.01) == 0.01


def test_windows_scale_down():
    w = build_windows(100)
    assert w.w1 == 15 and w.w_minus2 == 90
    assert w.slow[0][0] == 15 and w.slow[-1][1] == 90
    bounds = w.boundaries
    assert all(a < b for a, b in zip(bounds, bounds[1:]))


def test_keyed_mass_follows_keys():
    m = KeyedMassAdapter(min_count=2)
    for x in ([0.0, 1.0], [2.0, 1.0], [4.0, 1.0]):
        m.observe([("tau", 1), ("mu", 2)], np.array(x))
    m.end_window()
    out = m.lookup([("mu", 2), ("tau", 1), ("tau", 9), ("sigma",)])
    assert out[1] > out[0]
    assert out[2] == out[1]  # unseen key borrows its kind's median
    assert out[3] == 1.0
    unit = KeyedMassAdapter(fallback="unit")
    assert unit.lookup([("tau", 3)])[0] == 1.0


def test_nuts_is_deterministic():
    def run():
        rng = np.random.default_rng(11)
        s = HmcState.from_fn(np.zeros(2), banana)
        sched = AdaptationSchedule(0.3, np.ones(2))
        out = []
        for _ in range(200):
            s, _ = nuts_step(s, sched, banana, rng)
            out.append(s.position.copy())
        return np.array(out)

    assert np.array_equal(run(), run())
