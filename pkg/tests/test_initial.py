import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from filtlab import errors
from filtlab.initial import (
    bb_compensator,
    bb_density_process,
    bb_density_q,
    bb_drift,
    diffusion_info_drift,
    enlarged_brownian_given_tau,
    gaussian_kernel,
    hitting_alpha,
    hitting_cdf,
    nth_jump_compensator,
    nth_jump_compensator_increment,
    nth_jump_tail,
    ou_kernel,
    poisson_bridge_compensator,
    poisson_bridge_intensity,
    poisson_density_process,
    poisson_density_q,
)
from filtlab.paths import make_grid, simulate_brownian, simulate_poisson
from filtlab.verify import martingale_increment_test

from oracles import (
    BB_Q_HALF,
    bridge_density_ratio,
    first_passage_cdf,
    nth_arrival_tail,
    ou_score,
    poisson_bridge_ratio,
)

times = st.floats(0.0, 0.95)
reals = st.floats(-3.0, 3.0)


# Brownian bridge

def test_bb_density_frozen_value():
    assert bb_density_q(0.5, 0.0, 1.0) == pytest.approx(BB_Q_HALF, rel=1e-14)
    assert bb_density_q(0.0, 0.0, 2.3) == pytest.approx(1.0)


@given(times, reals, reals)
def test_bb_density_matches_gaussian_ratio(t, b, x):
    assert bb_density_q(t, b, x) == pytest.approx(bridge_density_ratio(t, b, x), rel=1e-10)


@given(st.floats(0.0, 0.9), reals)
def test_bb_density_integrates_to_one(t, b):
    # the integrand is negligible beyond 12 bridge standard deviations; further out q * p overflows
    w = 12 * math.sqrt(1 - t)
    val, _ = integrate.quad(lambda x: bb_density_q(t, b, x) * stats.norm.pdf(x), b - w, b + w, limit=200)
    assert val == pytest.approx(1.0, abs=1e-6)


def test_bb_domain():
    with pytest.raises(errors.InvalidArgument):
        bb_density_q(1.0, 0.0, 0.0)
    with pytest.raises(errors.InvalidArgument):
        bb_drift(-0.1, 0.0, 0.0)


def test_bb_compensator_on_a_linear_path():
    g = make_grid(1.0, 4)
    from filtlab.paths import PathBundle
    b = PathBundle(g, np.zeros((1, 5)), aux={"L": np.array([1.0])})
    A = bb_compensator(b)[0]
    # drift 1/(1-u); trapezoid of that on nodes before 1, held at 1
    f = 1 / (1 - g.points[:4])
    expect = np.concatenate([[0], np.cumsum(0.5 * 0.25 * (f[1:] + f[:-1]))])
    np.testing.assert_allclose(A[:4], expect)
    assert A[4] == A[3]


def test_bb_density_process_is_a_martingale():
    g = make_grid(1.0, 8)
    b = simulate_brownian(g, 40_000, 3)
    q = bb_density_process(b, 0.5)
    assert np.isnan(q[:, -1]).all()
    b = b.with_channels(q=q)
    reps = martingale_increment_test(b, process="q", pairs=[(0.25, 0.75)])
    assert all(r.passed for r in reps)


# diffusion drift

@given(st.floats(0.0, 0.9), reals, reals)
def test_gaussian_kernel_drift_equals_bridge_drift(t, y, x):
    assert diffusion_info_drift(gaussian_kernel, t, y, x, 1.0) == pytest.approx(bb_drift(t, y, x), abs=1e-6)


@given(st.floats(0.1, 3.0), st.floats(0.0, 0.9), reals, reals)
def test_ou_drift_matches_hand_derivative(a, t, y, x):
    got = diffusion_info_drift(ou_kernel(a), t, y, x, 1.0)
    assert got == pytest.approx(ou_score(a, 1.0 - t, y, x), rel=1e-6, abs=1e-6)


def test_diffusion_drift_sigma_and_errors():
    assert diffusion_info_drift(gaussian_kernel, 0.5, 0.0, 1.0, 1.0, sigma=2.0) == pytest.approx(8.0, rel=1e-6)
    with pytest.raises(errors.DomainError):
        diffusion_info_drift(lambda v, y, x: 0.0 * y, 0.5, 0.0, 1.0, 1.0)
    with pytest.raises(errors.InvalidArgument):
        diffusion_info_drift(gaussian_kernel, 1.0, 0.0, 1.0, 1.0)


# Poisson bridge

@given(st.floats(0.0, 0.95), st.integers(0, 12), st.integers(0, 12), st.floats(0.2, 5.0))
def test_poisson_density_matches_conditional_pmf(t, k, N, lam):
    assert poisson_density_q(t, k, N, lam) == pytest.approx(poisson_bridge_ratio(t, k, N, lam), rel=1e-9, abs=1e-300)


@given(st.floats(0.0, 0.95), st.integers(0, 6), st.floats(0.2, 3.0))
def test_poisson_density_sums_to_one(t, N, lam):
    k = np.arange(N, N + 60)
    total = math.fsum(poisson_density_q(t, k, N, lam) * stats.poisson.pmf(k, lam))
    assert total == pytest.approx(1.0, abs=1e-12)


def test_poisson_intensity():
    assert poisson_bridge_intensity(0.5, 3, 1) == pytest.approx(4.0)
    with pytest.raises(errors.InvalidArgument):
        poisson_bridge_intensity(0.5, 1, 2)
    with pytest.raises(errors.InvalidArgument):
        poisson_bridge_intensity(1.0, 2, 1)


def test_poisson_compensator_against_numeric_integral():
    g = make_grid(1.0, 4)
    b = simulate_poisson(3.0, 1.0, 50, 2, grid=g)
    A = poisson_bridge_compensator(b)
    for p in range(10):
        jumps = b.jump_times.path(p)
        L = b.aux["N_T"][p]
        for j, t in enumerate(g.points[:-1]):
            f = lambda s: (L - np.sum(jumps <= s)) / (1 - s)
            pts = [x for x in jumps if x < t]
            val, _ = integrate.quad(f, 0, t, points=pts or None, limit=200) if t > 0 else (0.0, 0)
            assert A[p, j] == pytest.approx(val, abs=1e-7)


def test_poisson_density_process_nan_at_one():
    b = simulate_poisson(1.0, 1.0, 10, 1, grid=make_grid(1.0, 4))
    q = poisson_density_process(b, 2, 1.0)
    assert np.isnan(q[:, -1]).all()
    assert np.all(q[:, 0] == pytest.approx(poisson_density_q(0.0, 2, 0, 1.0)))


# n-th jump

@given(st.floats(0.0, 2.0), st.floats(0.0, 3.0), st.integers(0, 4), st.floats(0.3, 4.0))
def test_nth_jump_tail_matches_poisson_cdf(t, dx, N_t, lam):
    n = 5
    x = t + dx
    got = nth_jump_tail(t, x, N_t, n, lam)
    expect = 1.0 if dx == 0 else nth_arrival_tail(t, x, N_t, n, lam)
    assert got == pytest.approx(expect, abs=1e-12)


def test_nth_jump_tail_after_the_event():
    assert nth_jump_tail(1.0, 2.0, 3, 3, 1.0) == 0.0
    assert nth_jump_tail(1.0, 0.5, 3, 3, 1.0, N_x=1) == 1.0
    assert nth_jump_tail(1.0, 0.5, 3, 3, 1.0, N_x=3) == 0.0
    with pytest.raises(errors.InvalidArgument):
        nth_jump_tail(1.0, 0.5, 3, 3, 1.0)


def test_nth_jump_increment():
    inc = nth_jump_compensator_increment(0.5, 1, 3, 1.5, 2.0)
    assert inc.rate == pytest.approx(1.0) and not inc.jump
    inc = nth_jump_compensator_increment(2.0, 3, 3, 1.5, 2.0)
    assert inc.rate == 2.0 and inc.jump
    with pytest.raises(errors.InvalidArgument):
        nth_jump_compensator_increment(1.5, 2, 3, 1.5, 2.0)


def test_nth_jump_compensator_against_numeric_integral():
    n, lam = 3, 2.0
    g = make_grid(2.0, 8)
    b = simulate_poisson(lam, 2.0, 40, 8, grid=g, min_jumps=n)
    A = nth_jump_compensator(b, n, lam)
    for p in range(15):
        Tn = b.aux["T_n"][p]
        jumps = b.jump_times.path(p)
        for j, t in enumerate(g.points):
            r = min(t, Tn)
            f = lambda u: (n - 1 - np.sum(jumps <= u)) / (Tn - u)
            pts = [x for x in jumps if x < r]
            val = integrate.quad(f, 0, r, points=pts or None, limit=200)[0] if r > 0 else 0.0
            expect = val + lam * (t - r) + (Tn <= t)
            assert A[p, j] == pytest.approx(expect, abs=1e-6)


# first passage

def test_hitting_cdf_values():
    assert hitting_cdf(0.0, 0.0, 1.0) == pytest.approx(first_passage_cdf(1.0))
    assert hitting_cdf(0.3, 0.2, 0.3) == 0.0
    assert hitting_cdf(0.5, 0.0, 0.7, alive=False, tau=0.4) == 1.0
    assert hitting_cdf(0.5, 0.0, 0.3, alive=False, tau=0.4) == 0.0
    with pytest.raises(errors.InvalidArgument):
        hitting_cdf(0.5, -1.0, 0.7)
    with pytest.raises(errors.InvalidArgument):
        hitting_cdf(0.5, 0.0, 0.4)


@given(st.floats(0.0, 2.0), st.floats(0.01, 3.0), st.floats(0.01, 3.0))
def test_hitting_cdf_is_a_shifted_levy_law(t, lag, gap):
    assert hitting_cdf(t, gap - 1.0, t + lag) == pytest.approx(first_passage_cdf(lag, gap), abs=1e-12)


def test_hitting_alpha():
    assert hitting_alpha(0.0, 0.0, 1.0) == pytest.approx(0.0)
    assert hitting_alpha(0.5, 1.0, 2.0) == pytest.approx(0.5 - 2.0 / 1.5)
    with pytest.raises(errors.InvalidArgument):
        hitting_alpha(0.5, -1.0, 2.0)
    with pytest.raises(errors.InvalidArgument):
        hitting_alpha(2.0, 0.0, 2.0)


def test_conditioned_paths_pin_at_minus_one():
    g = make_grid(1.0, 2048, "geometric", 1e-9 ** (1 / 2047))
    b = enlarged_brownian_given_tau(0.8, g, 2000, 4)
    ti = b.terminal_index()
    final = b.values[np.arange(b.n_paths), ti]
    assert np.sqrt(np.mean((final + 1) ** 2)) < 0.05
    assert np.all(b.values[:, :-1] > -1)
    assert np.all(b.values[:, -1] == -1)
    with pytest.raises(errors.InvalidArgument):
        enlarged_brownian_given_tau(-1.0, g, 10, 1)
