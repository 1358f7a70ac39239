import dataclasses
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynlab import (DiffusionSchedule, DivergenceError, InvalidGridError, InvalidInputError,
                    ScalarSchedule, build_sfogda_alt, build_shbf, build_shbfop_alt,
                    coarsen_path, integrate_em, integrate_em_batch, integrate_rk4,
                    make_bilinear_saddle, make_quadratic, make_rotation, sample_brownian,
                    stability_hint, uniform_grid, zero_path)
from dynlab.sde import _normals, StabilityWarning

ZERO = DiffusionSchedule.zero()
ONE = ScalarSchedule.constant(1.0)


def oscillator_exact(lam, q, y0, v0, t):
    """y'' + lam y' + q y = 0 by eigendecomposition of the companion matrix."""
    M = np.array([[0.0, 1.0], [-q, -lam]])
    w, V = np.linalg.eig(M)
    c = np.linalg.solve(V, np.array([y0, v0], dtype=complex))
    return np.real((V * c) @ np.exp(np.outer(w, t))).T


@pytest.fixture
def oscillator():
    return build_shbf(1.0, ONE, ZERO, make_quadratic([1.0]), initial=([1.0], [0.0]),
                      horizon=10.0)


# ---------------------------------------------------------------------------
# Brownian paths

def test_brownian_is_deterministic_per_seed():
    grid = uniform_grid(0.0, 1.0, 1e-2)
    a = sample_brownian(7, grid, 3)
    b = sample_brownian(7, grid, 3)
    c = sample_brownian(8, grid, 3)
    np.testing.assert_array_equal(a.increments, b.increments)
    assert not np.array_equal(a.increments, c.increments)
    np.testing.assert_array_equal(a.values()[0], 0.0)


def test_brownian_moments():
    grid = uniform_grid(0.0, 1.0, 1e-3)
    w1 = np.array([sample_brownian(s, grid, 1).values()[-1, 0] for s in range(4000)])
    assert abs(w1.mean()) < 4 * (1 / np.sqrt(4000))
    assert w1.var() == pytest.approx(1.0, abs=0.1)


def test_brownian_increments_scale_with_nonuniform_steps():
    grid = np.concatenate(([0.0], np.geomspace(1e-3, 10.0, 50)))
    path = sample_brownian(0, grid, 2000)
    var = path.increments.var(axis=1)
    np.testing.assert_allclose(var / np.diff(grid), 1.0, atol=0.15)


@pytest.mark.parametrize("chunk", [1, 7, 4096])
def test_chunked_draws_equal_single_draw(chunk):
    single = np.random.default_rng(5).standard_normal((1000, 2))
    chunked = np.concatenate([z for _, z in _normals(5, 1000, 2, chunk)])
    np.testing.assert_array_equal(chunked, single)


@pytest.mark.parametrize("grid", [[0.0], [0.0, 1.0, 1.0], [0.0, 2.0, 1.0], [0.0, np.nan]])
def test_bad_grids_rejected(grid):
    with pytest.raises(InvalidGridError):
        sample_brownian(0, np.array(grid), 1)


def test_uniform_grid_rejects_non_divisor():
    with pytest.raises(InvalidGridError):
        uniform_grid(0.0, 1.0, 0.3)


def test_coarsen_sums_increments():
    grid = uniform_grid(0.0, 1.0, 0.125)
    p = sample_brownian(1, grid, 2)
    c = coarsen_path(p, 4)
    np.testing.assert_allclose(c.values(), p.values()[::4], atol=1e-15)
    np.testing.assert_array_equal(c.grid, grid[::4])
    with pytest.raises(InvalidInputError):
        coarsen_path(p, 3)


# ---------------------------------------------------------------------------
# deterministic accuracy

def test_em_and_rk4_against_closed_form(oscillator):
    t = uniform_grid(0.0, 10.0, 1e-4)
    em = integrate_em(oscillator, zero_path(t, 1))
    exact = oscillator_exact(1.0, 1.0, 1.0, 0.0, em.grid)
    assert np.max(np.abs(em.states - exact)) <= 1e-3
    t = uniform_grid(0.0, 10.0, 1e-3)
    rk = integrate_rk4(oscillator, t)
    exact = oscillator_exact(1.0, 1.0, 1.0, 0.0, rk.grid)
    assert np.max(np.abs(rk.states - exact)) <= 1e-8


def test_rk4_order_is_four(oscillator):
    errs = []
    for h in (0.2, 0.1, 0.05, 0.025):
        tr = integrate_rk4(oscillator, uniform_grid(0.0, 10.0, h))
        errs.append(np.max(np.abs(tr.states[-1] - oscillator_exact(1.0, 1.0, 1.0, 0.0,
                                                                   tr.grid[-1:])[0])))
    slope = np.polyfit(np.log([0.2, 0.1, 0.05, 0.025]), np.log(errs), 1)[0]
    assert abs(slope - 4.0) <= 0.3


def test_em_order_is_one(oscillator):
    errs = []
    steps = (0.02, 0.01, 0.005, 0.0025)
    for h in steps:
        tr = integrate_em(oscillator, zero_path(uniform_grid(0.0, 10.0, h), 1))
        errs.append(np.max(np.abs(tr.states - oscillator_exact(1.0, 1.0, 1.0, 0.0, tr.grid))))
    slope = np.polyfit(np.log(steps), np.log(errs), 1)[0]
    assert abs(slope - 1.0) <= 0.15


def test_rk4_refuses_noise():
    spec = build_shbf(1.0, ONE, DiffusionSchedule(ONE), make_quadratic([1.0]))
    with pytest.raises(InvalidInputError):
        integrate_rk4(spec, uniform_grid(0.0, 1.0, 0.1))


def test_grid_must_span_the_horizon(oscillator):
    with pytest.raises(InvalidGridError):
        integrate_em(oscillator, zero_path(uniform_grid(0.0, 5.0, 0.1), 1))


def test_recording_keeps_endpoints(oscillator):
    tr = integrate_em(oscillator, zero_path(uniform_grid(0.0, 10.0, 0.01), 1), record_every=300)
    assert tr.grid[0] == 0.0 and tr.grid[-1] == pytest.approx(10.0)
    full = integrate_em(oscillator, zero_path(uniform_grid(0.0, 10.0, 0.01), 1))
    np.testing.assert_array_equal(tr.states[-1], full.states[-1])


def test_stationary_start_stays_put():
    q = make_quadratic([1.0, 3.0], [0.5, -1.0])
    spec = build_shbf(1.0, ONE, ZERO, q, initial=(q.minimizer, [0.0, 0.0]), horizon=5.0)
    tr = integrate_em(spec, zero_path(uniform_grid(0.0, 5.0, 0.01), 2))
    np.testing.assert_array_equal(tr.states, np.tile(spec.initial_state, (tr.grid.size, 1)))


# ---------------------------------------------------------------------------
# the linear-map fast path agrees with the generic drift

def _without_linear_map(spec):
    return dataclasses.replace(spec, problem=dataclasses.replace(spec.problem, linear_map=None))


LINEAR_CASES = [
    lambda d: build_shbf(0.7, ScalarSchedule.power_law(1.0, 1.0, 1.0), d,
                         make_quadratic([0.5, 2.0, 1.0], [1.0, -1.0, 0.25]),
                         initial=([0.0, 1.0, 2.0], [0.5, -0.5, 0.0]), t_start=1.0, horizon=3.0),
    lambda d: build_shbfop_alt(2.0, ScalarSchedule.exponential(0.5, 0.5),
                               ScalarSchedule.exponential(0.5, 0.5), d,
                               make_bilinear_saddle([[1.0, 2.0], [0.0, -1.0]]),
                               initial=([1.0, 0.0, -1.0, 0.5], [0.0, 0.3, 0.0, 0.0]),
                               horizon=3.0),
    lambda d: build_sfogda_alt(4.0, 1.0, d, make_rotation(), initial=([1.0, 2.0], [0.0, 1.0]),
                               s_start=1.0, horizon=3.0),
]


@pytest.mark.parametrize("make", LINEAR_CASES)
@pytest.mark.parametrize("noisy", [False, True])
def test_linear_fast_path_matches_generic_drift(make, noisy):
    diff = DiffusionSchedule(ScalarSchedule.constant(0.3)) if noisy else ZERO
    spec = make(diff)
    grid = uniform_grid(spec.t_start, spec.horizon, 1e-3)
    path = sample_brownian(3, grid, spec.dim)
    fast = integrate_em(spec, path)
    slow = integrate_em(_without_linear_map(spec), path)
    np.testing.assert_allclose(fast.states, slow.states, rtol=1e-10, atol=1e-12)


# ---------------------------------------------------------------------------
# batches

@pytest.fixture
def noisy_shbf():
    return build_shbf(1.0, ONE, DiffusionSchedule(ScalarSchedule.constant(0.5)),
                      make_quadratic([1.0, 2.0]), initial=([1.0, -1.0], [0.0, 0.0]),
                      horizon=2.0)


def test_batch_path_equals_single_path(noisy_shbf):
    grid = uniform_grid(0.0, 2.0, 1e-3)
    seeds = list(range(10, 140))  # crosses a batch boundary
    batch = integrate_em_batch(noisy_shbf, grid, seeds, record_every=7)
    for j in (0, 5, 127, 128, 129):
        single = integrate_em(noisy_shbf, sample_brownian(seeds[j], grid, 2), record_every=7)
        np.testing.assert_array_equal(batch.path(j).states, single.states)
    assert batch.diverged == {}


@pytest.mark.parametrize("threads", ["1", "3"])
def test_batch_is_independent_of_thread_count(noisy_shbf, monkeypatch, threads):
    grid = uniform_grid(0.0, 2.0, 1e-2)
    seeds = list(range(300))
    monkeypatch.setenv("DYNLAB_THREADS", "1")
    ref = integrate_em_batch(noisy_shbf, grid, seeds)
    monkeypatch.setenv("DYNLAB_THREADS", threads)
    got = integrate_em_batch(noisy_shbf, grid, seeds)
    np.testing.assert_array_equal(got.states, ref.states)


def test_bad_thread_setting(noisy_shbf, monkeypatch):
    monkeypatch.setenv("DYNLAB_THREADS", "many")
    with pytest.raises(InvalidInputError):
        integrate_em_batch(noisy_shbf, uniform_grid(0.0, 2.0, 0.1), [0])


# ---------------------------------------------------------------------------
# divergence and stability guidance

def test_divergence_raises_with_context():
    spec = build_shbf(0.1, ONE, ZERO, make_quadratic([1.0]), initial=([1.0], [0.0]),
                      horizon=400.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StabilityWarning)
        with pytest.raises(DivergenceError) as info:
            integrate_em(spec, zero_path(uniform_grid(0.0, 400.0, 0.5), 1))
    assert info.value.index > 0
    assert info.value.time == pytest.approx(0.5 * info.value.index)


def test_stability_warning_for_large_steps(oscillator):
    with pytest.warns(StabilityWarning):
        integrate_em(oscillator, zero_path(uniform_grid(0.0, 10.0, 1.0), 1))
    assert stability_hint(oscillator) > 1e-3


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 5.0), st.floats(0.1, 10.0))
def test_steps_below_hint_do_not_grow(lam, q):
    spec = build_shbf(lam, ONE, ZERO, make_quadratic([q]), initial=([1.0], [0.0]),
                      horizon=20.0)
    h = stability_hint(spec)
    n = int(np.ceil(20.0 / h)) + 1
    tr = integrate_em(spec, zero_path(np.linspace(0.0, 20.0, n + 1), 1))
    assert np.max(np.abs(tr.states)) <= 10.0


def test_same_seed_gives_identical_trajectory(noisy_shbf):
    grid = uniform_grid(0.0, 2.0, 1e-3)
    a = integrate_em(noisy_shbf, sample_brownian(9, grid, 2))
    b = integrate_em(noisy_shbf, sample_brownian(9, grid, 2))
    np.testing.assert_array_equal(a.states, b.states)


def test_strong_refinement_on_coupled_paths(noisy_shbf):
    fine = sample_brownian(21, uniform_grid(0.0, 2.0, 2.0 / 4096), 2)
    finals = {}
    for f in (1, 2, 4, 8, 16, 32):
        finals[f] = integrate_em(noisy_shbf, coarsen_path(fine, f)).states[-1]
    steps = np.array([2.0 / 4096 * f for f in (32, 16, 8, 4)])
    diffs = np.array([np.max(np.abs(finals[f] - finals[f // 2])) for f in (32, 16, 8, 4)])
    assert np.all(np.diff(diffs) < 0)
    assert np.polyfit(np.log(steps), np.log(diffs), 1)[0] >= 0.4


@pytest.mark.parametrize("make", LINEAR_CASES)
def test_zero_noise_em_tracks_rk4(make):
    spec = make(ZERO)
    errs = []
    for h in (0.01, 0.005):
        grid = uniform_grid(spec.t_start, spec.horizon, h)
        em = integrate_em(spec, zero_path(grid, spec.dim))
        rk = integrate_rk4(spec, grid)
        errs.append(np.max(np.abs(em.states - rk.states)))
    # first order: halving the step halves the gap
    assert 0.4 <= errs[1] / errs[0] <= 0.6
