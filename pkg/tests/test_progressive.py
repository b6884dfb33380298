import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from filtlab import errors
from filtlab.initial import bb_drift
from filtlab.paths import make_grid
from filtlab.progressive import (
    VarianceSchedule,
    noisy_drift,
    peof_innovation_signal_cov,
    prog_bridge_simulate,
    simulate_peof,
)

from oracles import PEOF_COV, innovation_signal_cov

schedules = st.tuples(st.floats(0.1, 0.9), st.floats(0.0, 2.0), st.floats(0.0, 2.0))


@given(schedules, st.floats(0.0, 1.0))
def test_cumvar_matches_quadrature(sch, t):
    brk, s1, s2 = sch
    s = VarianceSchedule([s1, s2], [brk], 1.0)
    val = integrate.quad(lambda u: s.sigma(u) ** 2, 0, t, points=[brk] if brk < t else None)[0]
    assert s.cumvar(t) == pytest.approx(val, abs=1e-10)
    assert s.tail(t) == pytest.approx(s.total - val, abs=1e-10)


def test_schedule_validation():
    with pytest.raises(errors.InvalidArgument):
        VarianceSchedule([1.0], [0.5])
    with pytest.raises(errors.InvalidArgument):
        VarianceSchedule([1.0, 1.0], [1.5])
    with pytest.raises(errors.InvalidArgument):
        VarianceSchedule([np.inf])
    with pytest.raises(errors.InvalidArgument):
        VarianceSchedule.bridge([2.0])


def test_bridge_schedule():
    s = VarianceSchedule.bridge([np.sqrt(0.5), 0.5], [0.5])
    assert s.v0 == pytest.approx(0.625)
    assert s.v(1.0) == pytest.approx(1.0)
    s.check_bridge(make_grid(1.0, 64))
    with pytest.raises(errors.InvalidArgument, match="sigma"):
        VarianceSchedule.bridge([0.5, 1.0], [0.5]).check_bridge()
    with pytest.raises(errors.InvalidArgument, match="v\\(T\\)"):
        VarianceSchedule([0.5], v0=0.1).check_bridge()


def test_noisy_drift_reduces_to_the_bridge_drift_without_noise():
    t, b, x = 0.3, 0.2, -0.4
    assert noisy_drift(t, x, b, 1.0, 0.0) == pytest.approx(bb_drift(t, b, x))
    with pytest.raises(errors.InvalidArgument):
        noisy_drift(1.0, x, b, 1.0, 0.0)


@pytest.mark.parametrize("s", sorted(PEOF_COV))
def test_innovation_signal_cov_oracles(s):
    sch = VarianceSchedule([1.0, 0.5], [0.5], 1.0)
    got = peof_innovation_signal_cov(sch, s)
    assert got == pytest.approx(PEOF_COV[s], abs=5e-7)
    assert got == pytest.approx(innovation_signal_cov([1.0, 0.5], [0.5], 1.0, s), abs=1e-10)


@given(schedules, st.floats(0.0, 0.99))
def test_innovation_signal_cov_closed_form(sch, s):
    brk, s1, s2 = sch
    got = peof_innovation_signal_cov(VarianceSchedule([s1, s2], [brk], 1.0), s)
    assert got == pytest.approx(innovation_signal_cov([s1, s2], [brk], 1.0, s), abs=1e-9)
    assert got >= -1e-12


def test_zero_noise_innovation_is_the_bridge_innovation():
    # sigma = 0: V is B_1 and W~ is B minus the bridge drift integral
    sch = VarianceSchedule([0.0], (), 1.0)
    g = make_grid(1.0, 64)
    b = simulate_peof(sch, g, 500, 3)
    np.testing.assert_allclose(b.channels["V"], np.repeat(b.values[:, -1:], 65, axis=1))
    assert peof_innovation_signal_cov(sch, 0.5) == pytest.approx(0.0, abs=1e-12)


def test_peof_innovation_covariance_small_run():
    sch = VarianceSchedule([1.0, 0.5], [0.5], 1.0)
    b = simulate_peof(sch, make_grid(1.0, 128), 20_000, 5)
    w = b.at(0.5, "W_tilde")
    assert np.var(w) == pytest.approx(0.5, abs=0.03)
    assert np.mean(w * b.at(0.5, "V")) == pytest.approx(PEOF_COV[0.5], abs=0.03)


def test_prog_bridge_pins_and_records():
    sch = VarianceSchedule.bridge([np.sqrt(0.5), 0.5], [0.5])
    g = make_grid(1.0, 1024, "geometric", 1e-3 ** (1 / 1023))
    t = g.nearest(0.5)
    b = prog_bridge_simulate(sch, g, 2000, 2, record=[t])
    assert b.grid.n_steps == 3
    ti = b.terminal_index()[0]
    gap = b.values[:, ti] - b.channels["V"][:, ti]
    assert np.sqrt(np.mean(gap**2)) < 0.05
    d = b.at(t) - b.at(t, "V")
    assert np.mean(d**2) == pytest.approx(sch.v(t) - t, rel=0.15)


def test_prog_bridge_rejects_bad_schedule():
    with pytest.raises(errors.InvalidArgument):
        prog_bridge_simulate(VarianceSchedule([0.5], v0=0.1), make_grid(1.0, 8), 10, 1)
