import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from filtlab import errors
from filtlab.paths import (
    JumpLaw,
    JumpTimes,
    LevyModel,
    PathBundle,
    TimeGrid,
    geometric_beta,
    make_grid,
    sample_hitting_time_unit,
    simulate_brownian,
    simulate_ou,
    simulate_poisson,
    simulate_poisson_conditional,
    simulate_sde_euler,
)
from filtlab.rng import BLOCK

from oracles import brute_cumulative, first_passage_cdf


# grids

def test_uniform_grid():
    g = make_grid(2.0, 8)
    np.testing.assert_allclose(g.points, np.linspace(0, 2, 9))
    assert g.index_of(0.5) == 2
    with pytest.raises(errors.InvalidArgument):
        g.index_of(0.3)


def test_geometric_grid_step_ratio():
    g = make_grid(1.0, 4, "geometric", 0.5)
    h = g.steps
    assert h[-1] / h[0] == pytest.approx(0.125)
    assert g.points[-1] == 1.0
    b = geometric_beta(100, 1e-6)
    g2 = make_grid(1.0, 100, "geometric", b)
    assert g2.steps[-1] / g2.steps[0] == pytest.approx(1e-6, rel=1e-9)


@pytest.mark.parametrize("args", [(0.0, 8), (1.0, 1), (1.0, 2.5), (1.0, 8, "geometric", None),
                                  (1.0, 8, "geometric", 1.5), (1.0, 8, "log")])
def test_make_grid_rejects(args):
    with pytest.raises(errors.InvalidArgument):
        make_grid(*args)


def test_timegrid_validation():
    with pytest.raises(errors.InvalidArgument):
        TimeGrid(np.array([0.1, 1.0]))
    with pytest.raises(errors.InvalidArgument):
        TimeGrid(np.array([0.0, 0.5, 0.5, 1.0]))


def test_grid_restrict_keeps_endpoints():
    g = make_grid(1.0, 8)
    sub, idx = g.restrict([0.5])
    np.testing.assert_array_equal(idx, [0, 4, 8])
    np.testing.assert_allclose(sub.points, [0, 0.5, 1])


# Brownian motion

def test_brownian_moments():
    g = make_grid(1.0, 16)
    b = simulate_brownian(g, 40_000, 11)
    assert b.values.shape == (40_000, 17)
    np.testing.assert_array_equal(b.values[:, 0], 0.0)
    var = b.values.var(axis=0)[[4, 8, 16]]
    np.testing.assert_allclose(var, [0.25, 0.5, 1.0], rtol=0.03)
    cov = np.mean(b.at(0.25) * b.at(0.75))
    assert cov == pytest.approx(0.25, abs=0.015)


@given(st.integers(0, 2 * BLOCK), st.integers(1, 600), st.integers(1, 600))
def test_brownian_paths_do_not_depend_on_chunking(start, n1, n2):
    g = make_grid(1.0, 4)
    whole = simulate_brownian(g, n1 + n2, 5, start=start).values
    a = simulate_brownian(g, n1, 5, start=start).values
    b = simulate_brownian(g, n2, 5, start=start + n1).values
    np.testing.assert_array_equal(whole, np.concatenate([a, b]))


def test_brownian_worker_count_invariance():
    g = make_grid(1.0, 8)
    a = simulate_brownian(g, 3 * BLOCK + 5, 1, workers=1).values
    b = simulate_brownian(g, 3 * BLOCK + 5, 1, workers=3).values
    np.testing.assert_array_equal(a, b)


def test_bad_path_counts():
    g = make_grid(1.0, 4)
    with pytest.raises(errors.InvalidArgument):
        simulate_brownian(g, 0, 1)
    with pytest.raises(errors.InvalidArgument):
        simulate_brownian(g, 10, -1)


# bundles

def test_bundle_is_read_only_and_validated():
    g = make_grid(1.0, 4)
    b = simulate_brownian(g, 10, 1)
    with pytest.raises(ValueError):
        b.values[0, 0] = 1.0
    with pytest.raises(errors.InvalidArgument):
        PathBundle(g, np.zeros((3, 4)))
    with pytest.raises(errors.InvalidArgument):
        b.with_aux(L=np.zeros(3))
    with pytest.raises(errors.InvalidArgument):
        b.process("nope")


def test_bundle_restrict_and_concat():
    g = make_grid(1.0, 8)
    a = simulate_brownian(g, 20, 1)
    a = a.with_channels(sq=a.values ** 2).with_aux(L=a.values[:, -1].copy())
    r = a.restrict([0.25, 0.5])
    np.testing.assert_allclose(r.grid.points, [0, 0.25, 0.5, 1])
    np.testing.assert_array_equal(r.at(0.5), a.at(0.5))
    np.testing.assert_array_equal(r.at(0.25, "sq"), a.at(0.25, "sq"))
    c = PathBundle.concat([r, r])
    assert c.n_paths == 40
    np.testing.assert_array_equal(c.aux["L"][20:], a.aux["L"])


# jump processes

@given(st.lists(st.lists(st.floats(0.001, 1.0), max_size=6), min_size=1, max_size=6))
def test_jump_cumulative_matches_brute_force(paths):
    paths = [sorted(p) for p in paths]
    counts = [len(p) for p in paths]
    flat = np.array([t for p in paths for t in p], dtype=float)
    jt = JumpTimes(flat, np.concatenate([[0], np.cumsum(counts)]))
    pts = np.linspace(0, 1, 7)
    np.testing.assert_allclose(jt.cumulative(pts), brute_cumulative(paths, pts))
    w = [np.arange(1, len(p) + 1, dtype=float) for p in paths]
    np.testing.assert_allclose(jt.cumulative(pts, np.concatenate(w) if w else None),
                               brute_cumulative(paths, pts, w))


def test_poisson_count_law():
    b = simulate_poisson(2.0, 1.0, 40_000, 3)
    N = b.aux["N_T"]
    assert np.mean(N == 0) == pytest.approx(math.exp(-2), abs=0.006)
    assert N.mean() == pytest.approx(2.0, abs=0.03)
    np.testing.assert_array_equal(b.values[:, -1], N)
    assert np.all(np.diff(b.values, axis=1) >= 0)


def test_poisson_nth_arrival_law():
    b = simulate_poisson(2.0, 1.0, 20_000, 4, min_jumps=3)
    ks = stats.kstest(b.aux["T_n"], stats.gamma(3, scale=0.5).cdf)
    assert ks.pvalue > 1e-3
    np.testing.assert_array_equal(b.aux["T_n"] <= 1.0, b.aux["N_T"] >= 3)


def test_conditional_poisson_route_has_the_same_law():
    a = simulate_poisson(1.5, 1.0, 30_000, 5, grid=make_grid(1.0, 4))
    c = simulate_poisson_conditional(1.5, 1.0, 30_000, 5, grid=make_grid(1.0, 4))
    assert c.aux["N_T"].mean() == pytest.approx(1.5, abs=0.03)
    assert c.at(0.5).mean() == pytest.approx(a.at(0.5).mean(), abs=0.03)
    assert np.all(c.jump_times.flat > 0) and np.all(c.jump_times.flat <= 1.0)


def test_compound_poisson_marks():
    law = JumpLaw("normal", mu=0.5, sigma=0.1)
    b = simulate_poisson(3.0, 1.0, 20_000, 6, jump_law=law)
    assert b.values[:, -1].mean() == pytest.approx(1.5, abs=0.04)


def test_levy_exponents():
    th = np.array([0.3, 1.0])
    np.testing.assert_allclose(LevyModel.brownian().exponent(th), -th**2 / 2)
    np.testing.assert_allclose(LevyModel.poisson(2.0).exponent(th), 2.0 * (np.exp(1j * th) - 1))
    m = LevyModel.compound_poisson(1.0, JumpLaw("constant", c=1.0))
    np.testing.assert_allclose(m.exponent(th), LevyModel.poisson(1.0).exponent(th))
    eps = 1e-6
    for model in (LevyModel.brownian(), LevyModel.poisson(2.0), LevyModel.brownian_with_drift(0.3),
                  LevyModel.compound_poisson(1.0, JumpLaw("normal", 0.2, 0.5))):
        fd = (model.exponent(th + eps) - model.exponent(th - eps)) / (2 * eps)
        np.testing.assert_allclose(model.exponent_derivative(th), fd, rtol=1e-6, atol=1e-8)
    with pytest.raises(errors.InvalidArgument):
        LevyModel.poisson(0.0)


def test_ou_exact_moments():
    a = 1.5
    g = make_grid(1.0, 8)
    b = simulate_ou(a, 1.0, g, 40_000, 2)
    assert b.at(1.0).mean() == pytest.approx(math.exp(-a), abs=0.01)
    assert b.at(1.0).var() == pytest.approx((1 - math.exp(-2 * a)) / (2 * a), rel=0.03)


def test_hitting_sampler_matches_levy_law():
    tau = sample_hitting_time_unit(50_000, 9)
    assert stats.kstest(tau, first_passage_cdf).pvalue > 1e-3
    assert np.mean(tau <= 1.0) == pytest.approx(0.3173, abs=0.007)


# Euler

def test_euler_zero_drift_is_brownian_bit_for_bit():
    g = make_grid(1.0, 16)
    e = simulate_sde_euler(lambda t, x, a: 0.0, lambda t, x: 1.0, g, 500, 3)
    np.testing.assert_array_equal(e.values, simulate_brownian(g, 500, 3).values)


def test_euler_linear_drift_mean():
    g = make_grid(1.0, 200)
    e = simulate_sde_euler(lambda t, x, a: -x, lambda t, x: 0.5, g, 20_000, 4, x0=1.0)
    assert e.at(1.0).mean() == pytest.approx(math.exp(-1), abs=0.01)


def test_euler_numeric_failure_names_node_and_path():
    g = make_grid(1.0, 4)
    drift = lambda t, x, a: np.where(np.asarray(t) >= 0.5, np.nan, 0.0)
    with pytest.raises(errors.NumericFailure) as ei:
        simulate_sde_euler(drift, lambda t, x: 1.0, g, 10, 1, start=20)
    assert ei.value.node == 2
    assert ei.value.path == 20


def test_euler_clip_counts():
    g = make_grid(1.0, 4)
    e = simulate_sde_euler(lambda t, x, a: 1e9, lambda t, x: 1.0, g, 10, 1, drift_clip=5.0)
    assert e.meta["clip_events"] == 40


def test_euler_absorb_and_reflect():
    g = make_grid(1.0, 50)
    absorb = simulate_sde_euler(lambda t, x, a: -5.0, lambda t, x: 1.0, g, 300, 2, barrier=-0.5)
    assert np.all(absorb.values >= -0.5)
    hit = absorb.meta["absorbed_at"] > 0
    assert hit.any()
    p = np.flatnonzero(hit)[0]
    assert np.all(absorb.values[p, absorb.meta["absorbed_at"][p]:] == -0.5)
    refl = simulate_sde_euler(lambda t, x, a: -5.0, lambda t, x: 1.0, g, 300, 2, barrier=-0.5,
                              barrier_mode="reflect")
    assert np.all(refl.values > -0.5)
    assert refl.meta["barrier_events"] > 0


def test_euler_singular_time_and_fill():
    g = make_grid(1.0, 10)
    e = simulate_sde_euler(lambda t, x, a: 0.0, lambda t, x: 1.0, g, 5, 1, singular_time=0.55, fill_after=9.0)
    np.testing.assert_array_equal(e.terminal_index(), 5)
    assert np.all(e.values[:, 6:] == 9.0)
    with pytest.raises(errors.InvalidArgument):
        simulate_sde_euler(lambda t, x, a: 0.0, lambda t, x: 1.0, g, 5, 1, singular_time=0.0)
