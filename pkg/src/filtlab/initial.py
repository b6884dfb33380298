"""Initial enlargement: conditional densities, information drifts and
compensators for a variable revealed at time 0.

Covered cases: the Brownian bridge (``L = B_T``), density-gradient drifts
for one-dimensional diffusions, the Poisson bridge (``L = N_1``), the
``n``-th Poisson jump (``L = T_n``) and the Brownian first passage to -1
(``L = tau``).
"""

from __future__ import annotations

import math
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import gammaincc, gammaln, ndtr

from .errors import DomainError, InvalidArgument
from .paths import PathBundle, TimeGrid, sample_hitting_time_unit, simulate_sde_euler

__all__ = [
    "bb_density_q",
    "bb_drift",
    "bb_compensator",
    "bb_density_process",
    "gaussian_kernel",
    "ou_kernel",
    "diffusion_info_drift",
    "poisson_density_q",
    "poisson_bridge_intensity",
    "poisson_bridge_compensator",
    "poisson_density_process",
    "nth_jump_tail",
    "CompensatorIncrement",
    "nth_jump_compensator_increment",
    "nth_jump_compensator",
    "hitting_cdf",
    "hitting_alpha",
    "enlarged_brownian_given_tau",
]


def _before(t, T, what="t"):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t >= T):
        raise InvalidArgument(f"{what} must lie in [0, {T:g})")
    return t


# --------------------------------------------------------------------------
# Brownian bridge: L = B_T


def bb_density_q(t, b, x, T: float = 1.0):
    """Density of the law of ``B_T`` given ``B_t = b`` relative to its prior, at ``x``.

    ``q = p_{T-t}(x - b) / p_T(x)`` with ``p_v`` the centred normal density of
    variance ``v``; it equals 1 at ``t = 0, b = 0``.
    """
    t = _before(t, T)
    b, x = np.asarray(b, dtype=float), np.asarray(x, dtype=float)
    r = T - t
    out = np.sqrt(T / r) * np.exp(-((x - b) ** 2) / (2 * r) + x**2 / (2 * T))
    return out if out.ndim else float(out)


def bb_drift(t, b, x, T: float = 1.0):
    """Information drift ``(x - b)/(T - t)`` of Brownian motion given ``B_T = x``."""
    t = _before(t, T)
    out = (np.asarray(x, dtype=float) - b) / (T - t)
    return out if np.ndim(out) else float(out)


def _cumtrapz(f: np.ndarray, h: np.ndarray) -> np.ndarray:
    out = np.zeros_like(f)
    np.cumsum(0.5 * h * (f[:, 1:] + f[:, :-1]), axis=1, out=out[:, 1:])
    return out


def bb_compensator(bundle: PathBundle, L: str = "L", T: float | None = None) -> np.ndarray:
    """``A_t = int_0^t (L - B_u)/(T - u) du`` by the trapezoid rule on the nodes before ``T``.

    The drift is singular at ``T``; the last node holds the value of the one
    before it.
    """
    T = bundle.grid.T if T is None else T
    pts = bundle.grid.points
    keep = pts < T * (1 - 1e-12)
    if L not in bundle.aux:
        raise InvalidArgument(f"bundle has no aux {L!r}")
    B = bundle.values[:, keep]
    d = (bundle.aux[L][:, None] - B) / (T - pts[keep])
    A = np.empty_like(bundle.values)
    A[:, keep] = _cumtrapz(d, np.diff(pts[keep]))
    A[:, ~keep] = A[:, [np.flatnonzero(keep)[-1]]]
    return A


def bb_density_process(bundle: PathBundle, x: float, T: float | None = None) -> np.ndarray:
    """``q(t_i, B_{t_i}, x)`` along each path; ``nan`` from ``T`` on."""
    T = bundle.grid.T if T is None else T
    pts = bundle.grid.points
    keep = pts < T
    out = np.full(bundle.values.shape, np.nan)
    out[:, keep] = bb_density_q(pts[keep][None, :], bundle.values[:, keep], x, T)
    return out


# --------------------------------------------------------------------------
# diffusions: drift from the transition density


def gaussian_kernel(v, y, x):
    """Brownian transition density: normal in ``x`` with mean ``y`` and variance ``v``."""
    return np.exp(-((x - y) ** 2) / (2 * v)) / np.sqrt(2 * math.pi * v)


def ou_kernel(a: float) -> Callable:
    """Transition density of ``dY = -a Y dt + dB`` over a time lag ``v``."""
    if not a > 0:
        raise InvalidArgument("mean reversion must be positive")

    def pi(v, y, x):
        m = y * np.exp(-a * v)
        var = -np.expm1(-2 * a * v) / (2 * a)
        return np.exp(-((x - m) ** 2) / (2 * var)) / np.sqrt(2 * math.pi * var)

    return pi


def diffusion_info_drift(pi: Callable, t, y, x, T: float, sigma: Callable | float = 1.0,
                         fd_step: float | None = None):
    """``sigma(y)**2 * d/dy log pi(T - t, y, x)`` by a central difference.

    The default step is ``1e-4 * (1 + |y|)``.  Raises :class:`DomainError`
    when the density is not positive at a point it is evaluated at.
    """
    t = _before(t, T)
    y = np.asarray(y, dtype=float)
    h = 1e-4 * (1 + np.abs(y)) if fd_step is None else fd_step
    if np.any(np.asarray(h) <= 0):
        raise InvalidArgument("fd_step must be positive")
    v = T - t
    up, dn = pi(v, y + h, x), pi(v, y - h, x)
    if np.any(~(np.asarray(up) > 0)) or np.any(~(np.asarray(dn) > 0)):
        raise DomainError("transition density must be positive at the difference points")
    s = sigma(y) if callable(sigma) else sigma
    out = np.asarray(s, dtype=float) ** 2 * (np.log(up) - np.log(dn)) / (2 * h)
    return out if np.ndim(out) else float(out)


# --------------------------------------------------------------------------
# Poisson bridge: L = N_1


def poisson_density_q(t, k, N, lam: float):
    """Conditional density of ``N_1`` at ``k`` given ``N_t = N``, relative to the Poisson(lam) prior.

    ``q = e^{lam t} lam^{-N} (1-t)^{k-N} k!/(k-N)!`` for ``k >= N`` and 0 otherwise.
    """
    t = _before(t, 1.0)
    if not lam > 0:
        raise InvalidArgument("rate must be positive")
    k, N = np.asarray(k, dtype=float), np.asarray(N, dtype=float)
    if np.any(k < 0) or np.any(N < 0):
        raise InvalidArgument("counts must be non-negative")
    ok = k >= N
    kk, NN = np.where(ok, k, 0.0), np.where(ok, N, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        pw = np.where(kk - NN == 0, 0.0, (kk - NN) * np.log1p(-t))
    logq = lam * t - NN * math.log(lam) + pw + gammaln(kk + 1) - gammaln(kk - NN + 1)
    out = np.where(ok, np.exp(logq), 0.0)
    return out if out.ndim else float(out)


def poisson_bridge_intensity(t_minus, k, N_minus):
    """Intensity ``(k - N_{t-})/(1 - t)`` of a Poisson process known to end at ``N_1 = k``."""
    t = _before(t_minus, 1.0, "t_minus")
    k, N = np.asarray(k, dtype=float), np.asarray(N_minus, dtype=float)
    if np.any(k < N):
        raise InvalidArgument("terminal count is below the current count")
    out = (k - N) / (1 - t)
    return out if out.ndim else float(out)


def poisson_bridge_compensator(bundle: PathBundle, L: str = "N_T", T: float | None = None) -> np.ndarray:
    """Exact ``int_0^t (L - N_s)/(T - s) ds`` from the jump epochs.

    With ``phi(u) = -log(1 - u/T)`` the integral equals
    ``(L - N_t) phi(t) + sum_{tau_j <= t} phi(tau_j)``.
    """
    jt = bundle.jump_times
    if jt is None:
        raise InvalidArgument("the Poisson bridge compensator needs exact jump times")
    T = bundle.grid.T if T is None else T
    pts = bundle.grid.points
    with np.errstate(divide="ignore"):
        phi_t = -np.log1p(-pts / T)
    phi_j = -np.log1p(-jt.flat / T)
    gap = bundle.aux[L][:, None] - bundle.values
    with np.errstate(invalid="ignore"):
        head = np.where(gap == 0, 0.0, gap * phi_t[None, :])
    return head + jt.cumulative(pts, phi_j)


def poisson_density_process(bundle: PathBundle, k: int, lam: float) -> np.ndarray:
    """``q(t_i, k, N_{t_i})`` along each path; ``nan`` from time 1 on."""
    pts = bundle.grid.points
    keep = pts < 1.0
    out = np.full(bundle.values.shape, np.nan)
    out[:, keep] = poisson_density_q(pts[keep][None, :], k, bundle.values[:, keep], lam)
    return out


# --------------------------------------------------------------------------
# n-th jump time: L = T_n


def nth_jump_tail(t: float, x: float, N_t: int, n: int, lam: float, N_x: int | None = None) -> float:
    """``P(T_n > x | F_t)`` for the ``n``-th arrival of a rate-``lam`` Poisson process.

    When ``T_n`` has already occurred (``N_t >= n``) the answer for ``x < t``
    is read off the path and needs ``N_x``.
    """
    if n < 1 or x < 0 or t < 0 or N_t < 0 or not lam > 0:
        raise InvalidArgument("need n >= 1, x >= 0, t >= 0, N_t >= 0 and lam > 0")
    if N_t >= n:
        if x >= t:
            return 0.0
        if N_x is None:
            raise InvalidArgument("N_x is required when T_n <= t and x < t")
        return 1.0 if N_x < n else 0.0
    if x <= t:
        return 1.0
    return float(gammaincc(n - N_t, lam * (x - t)))


class CompensatorIncrement(NamedTuple):
    rate: float
    jump: bool


def nth_jump_compensator_increment(u: float, N_u: int, n: int, T_n: float, lam: float) -> CompensatorIncrement:
    """Compensator density of ``N`` at time ``u`` given ``T_n``.

    ``rate`` is ``(n - N_u - 1)/(T_n - u)`` before ``T_n`` and ``lam`` after;
    ``jump`` is the indicator ``1{T_n <= u}`` of the unit jump the
    compensator makes at ``T_n``.  ``u == T_n`` has no rate and is rejected.
    """
    if n < 1 or not lam > 0:
        raise InvalidArgument("need n >= 1 and lam > 0")
    if u == T_n:
        raise InvalidArgument("no rate at u == T_n; the jump there is carried by the flag")
    if u > T_n:
        return CompensatorIncrement(float(lam), True)
    if N_u > n - 1:
        raise InvalidArgument("N_u cannot reach n before T_n")
    return CompensatorIncrement((n - N_u - 1) / (T_n - u), False)


def nth_jump_compensator(bundle: PathBundle, n: int, lam: float, L: str = "T_n",
                         include_jump: bool = True) -> np.ndarray:
    """Exact compensator of ``N`` in the filtration enlarged with ``T_n``.

    ``A_t = lam (t - T_n ^ t) + int_0^{T_n ^ t} (n - 1 - N_u)/(T_n - u) du + 1{T_n <= t}``.
    With ``include_jump=False`` the indicator is dropped.
    """
    jt = bundle.jump_times
    if jt is None:
        raise InvalidArgument("the n-th jump compensator needs exact jump times")
    Tn = bundle.aux[L]
    pts = bundle.grid.points[None, :]
    c = n - 1
    before = pts < Tn[:, None]
    r = np.minimum(pts, Tn[:, None])
    first = jt.rank() < c
    w = np.where(first, -np.log(Tn[jt.path_ids()] - jt.flat, where=first, out=np.ones_like(jt.flat)), 0.0)
    S = jt.cumulative(bundle.grid.points, w)
    phi0 = -np.log(Tn)[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        phi_r = np.where(before, -np.log(np.where(before, Tn[:, None] - r, 1.0)), 0.0)
    N = bundle.values
    integral = np.where(before, (c - N) * phi_r, 0.0) - c * phi0 + S
    A = lam * (pts - r) + integral
    if include_jump:
        A = A + (~before)
    return A


# --------------------------------------------------------------------------
# first passage to -1: L = tau


def hitting_cdf(t, b, s, alive: bool = True, tau: float | None = None):
    """``P(tau <= s | F_t)`` for ``tau`` the first passage of Brownian motion to -1.

    On ``{tau > t}`` (``alive``) this is ``2 Phi(-(1+b)/sqrt(s-t))`` and 0 at
    ``s = t``.  After absorption it is ``1{tau <= s}``; without ``tau`` the
    query is taken to be ``s >= tau``.
    """
    if not alive:
        if tau is None:
            return 1.0
        return 1.0 if s >= tau else 0.0
    b = np.asarray(b, dtype=float)
    if np.any(b <= -1):
        raise InvalidArgument("an alive path must sit above -1")
    lag = np.asarray(s, dtype=float) - t
    if np.any(lag < 0):
        raise InvalidArgument("query time must not precede t on an alive path")
    with np.errstate(divide="ignore"):
        out = np.where(lag > 0, 2 * ndtr(-(1 + b) / np.sqrt(np.where(lag > 0, lag, 1.0))), 0.0)
    return out if out.ndim else float(out)


def _alpha(t, b, tau):
    return 1.0 / (1.0 + b) - (1.0 + b) / (tau - t)


def hitting_alpha(t, b, tau):
    """Drift ``1/(1+b) - (1+b)/(tau - t)`` of Brownian motion given its first passage time to -1."""
    b, t, tau = (np.asarray(v, dtype=float) for v in (b, t, tau))
    if np.any(b <= -1):
        raise InvalidArgument("b must exceed -1")
    if np.any(t >= tau):
        raise InvalidArgument("t must precede tau")
    out = _alpha(t, b, tau)
    return out if out.ndim else float(out)


def enlarged_brownian_given_tau(tau, grid: TimeGrid, n_paths: int, seed: int, drift_clip: float = 1e4, *,
                                barrier_mode: str = "reflect", start: int = 0, workers: int = 1) -> PathBundle:
    """Brownian paths conditioned on their first passage time to -1.

    Solves ``dB = dbeta + hitting_alpha(t, B, tau) dt`` by Euler.  ``grid`` is
    a template on ``[0, T_g]`` (typically refined toward ``T_g``) stretched per
    path to ``[0, tau]``; node ``i`` of a path sits at ``tau * t_i / T_g``.
    Integration stops one node before ``tau``, where ``meta["terminal_index"]``
    points, and the last node holds -1.  The conditioned process never
    reaches -1 before ``tau``, so Euler overshoots below it are mirrored back
    by default; ``barrier_mode="absorb"`` keeps them instead.  ``tau=None`` samples it with
    :func:`sample_hitting_time_unit` for the same path indices.
    """
    if tau is None:
        tau = sample_hitting_time_unit(n_paths, seed, start=start)
    tau = np.broadcast_to(np.asarray(tau, dtype=float), (n_paths,)).copy()
    if not np.all(tau > 0) or not np.all(np.isfinite(tau)):
        raise InvalidArgument("tau must be positive and finite")
    bundle = simulate_sde_euler(
        lambda t, x, aux: _alpha(t, x, aux["tau"]),
        lambda t, x: 1.0,
        grid, n_paths, seed, drift_clip,
        aux={"tau": tau}, time_scale=tau / grid.T, singular_time=tau,
        barrier=-1.0, barrier_mode=barrier_mode, fill_after=-1.0, start=start, workers=workers, stream="beta",
    )
    return bundle.with_meta(process="brownian-given-tau")
