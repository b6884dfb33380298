"""Progressive enlargement by a Gaussian signal with a piecewise-constant
volatility schedule: the noisy terminal signal and the variance-schedule
bridge."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .errors import InvalidArgument
from .paths import PathBundle, TimeGrid, _base_meta, _check_paths
from .rng import BLOCK, StepNormals, block_generator, map_blocks, per_path_normals

__all__ = [
    "VarianceSchedule",
    "noisy_drift",
    "simulate_peof",
    "peof_innovation_signal_cov",
    "prog_bridge_simulate",
]


@dataclass(frozen=True)
class VarianceSchedule:
    """Piecewise-constant volatility ``sigma`` on ``[0, T]`` and the variances it induces.

    ``levels[j]`` holds on ``[breaks[j-1], breaks[j])``.  ``v(t) = v0 + int_0^t sigma^2``
    and ``tail(t) = int_t^T sigma^2``.
    """

    levels: tuple[float, ...]
    breaks: tuple[float, ...] = ()
    T: float = 1.0
    v0: float = 0.0

    def __post_init__(self):
        levels = tuple(float(x) for x in np.atleast_1d(self.levels))
        breaks = tuple(float(x) for x in np.atleast_1d(self.breaks)) if len(np.atleast_1d(self.breaks)) else ()
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "breaks", breaks)
        if not self.T > 0:
            raise InvalidArgument("horizon must be positive")
        if len(levels) != len(breaks) + 1:
            raise InvalidArgument("need exactly one more level than breaks")
        if any(not np.isfinite(x) for x in levels):
            raise InvalidArgument("volatility levels must be finite")
        edges = (0.0, *breaks, self.T)
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise InvalidArgument("breaks must be increasing inside (0, T)")
        if not self.v0 >= 0:
            raise InvalidArgument("v0 must be non-negative")

    @classmethod
    def bridge(cls, levels, breaks=(), T: float = 1.0) -> "VarianceSchedule":
        """Schedule with ``v0`` chosen so that ``v(T) = T``."""
        s = cls(levels, breaks, T, 0.0)
        v0 = T - s.total
        if v0 < 0:
            raise InvalidArgument(f"signal variance {s.total:g} exceeds the horizon; implied v0 = {v0:g} < 0")
        return cls(s.levels, s.breaks, T, v0)

    @property
    def edges(self) -> np.ndarray:
        return np.array((0.0, *self.breaks, self.T))

    @property
    def total(self) -> float:
        return float(np.sum(np.square(self.levels) * np.diff(self.edges)))

    def sigma(self, t):
        j = np.searchsorted(np.asarray(self.breaks), t, side="right")
        out = np.asarray(self.levels)[j]
        return out if np.ndim(out) else float(out)

    def cumvar(self, t):
        """``int_0^t sigma^2``, exact."""
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.T)
        e = self.edges
        seg = np.square(self.levels) * np.diff(e)
        before = np.concatenate([[0.0], np.cumsum(seg)])
        j = np.searchsorted(e[1:-1], t, side="right")
        out = before[j] + np.square(self.levels)[j] * (t - e[j])
        return out if out.ndim else float(out)

    def v(self, t):
        return self.v0 + self.cumvar(t)

    def tail(self, t):
        return self.total - self.cumvar(t)

    def check_bridge(self, grid: TimeGrid | None = None, tol: float = 1e-12) -> None:
        """Raise unless ``v(T) = T``, ``v(t) > t`` before ``T`` and the gap integral is finite."""
        if abs(self.v(self.T) - self.T) > tol * max(1.0, self.T):
            raise InvalidArgument(f"bridge needs v(T) = T, got v(T) = {self.v(self.T):.12g}")
        if self.levels[-1] ** 2 >= 1.0:
            raise InvalidArgument("bridge needs sigma^2 < 1 on the last segment, else v(t) <= t near T")
        # v(t) - t is piecewise linear: checking segment edges covers all of [0, T)
        for e in self.edges[:-1]:
            if not self.v(e) > e:
                raise InvalidArgument(f"v(t) <= t at t = {e:g}")
        if grid is not None:
            pts = grid.points[:-1]
            bad = np.flatnonzero(~(self.v(pts) > pts))
            if len(bad):
                i = int(bad[0])
                raise InvalidArgument(f"v(t) <= t at grid node {i} (t = {pts[i]:.12g})")


def noisy_drift(t, v_signal, b, T: float, tail_var):
    """``(V_t - B_t)/(T + tail - t)``, the drift of ``B`` given the noisy signal."""
    den = T + np.asarray(tail_var, dtype=float) - t
    if np.any(den <= 0):
        raise InvalidArgument("T + tail_var - t must be positive")
    out = (np.asarray(v_signal, dtype=float) - b) / den
    return out if np.ndim(out) else float(out)


def _gaussian_increments(seed, stream, b, lo, hi, scale):
    """Cumulative sums of ``scale * z`` along the grid, shape ``(hi - lo, len(scale) + 1)``."""
    z = block_generator(seed, stream, b).standard_normal((len(scale), BLOCK))[:, lo:hi]
    out = np.zeros((len(scale) + 1, hi - lo))
    np.cumsum(scale[:, None] * z, axis=0, out=out[1:])
    return out.T


def simulate_peof(schedule: VarianceSchedule, grid: TimeGrid, n_paths: int, seed: int, *,
                  start: int = 0, workers: int = 1) -> PathBundle:
    """Brownian ``B``, signal ``V_t = B_T + int_t^T sigma dW`` and innovation ``W~``.

    ``W~_t = B_t - int_0^t noisy_drift ds`` is integrated by the trapezoid rule
    on the nodes before ``T`` (the drift is singular at ``T``) and held there.
    Values are ``B``; channels ``V`` and ``W_tilde``.
    """
    _check_paths(n_paths, seed)
    if abs(grid.T - schedule.T) > 1e-12 * schedule.T:
        raise InvalidArgument("grid and schedule horizons differ")
    T, pts = schedule.T, grid.points
    sq_h = np.sqrt(grid.steps)
    sq_v = np.sqrt(np.diff(schedule.cumvar(pts)))
    den = T + schedule.tail(pts) - pts
    keep = den > 1e-12 * T
    last = int(np.flatnonzero(keep)[-1])

    def block(b, lo, hi):
        B = _gaussian_increments(seed, "peof-B", b, lo, hi, sq_h)
        I = _gaussian_increments(seed, "peof-W", b, lo, hi, sq_v)
        V = B[:, -1:] + I[:, -1:] - I
        d = (V[:, keep] - B[:, keep]) / den[keep]
        A = np.empty_like(B)
        A[:, keep] = np.concatenate(
            [np.zeros((hi - lo, 1)), np.cumsum(0.5 * np.diff(pts[keep]) * (d[:, 1:] + d[:, :-1]), axis=1)], axis=1)
        A[:, ~keep] = A[:, [last]]
        return B, V, B - A

    parts = map_blocks(block, start, n_paths, workers)
    B, V, W = (np.concatenate([p[k] for p in parts]) for k in range(3))
    meta = _base_meta(seed, start, n_paths, grid, process="noisy-signal", v0=schedule.v0, terminal_index=last)
    return PathBundle(grid, B, channels={"V": V, "W_tilde": W}, meta=meta)


def peof_innovation_signal_cov(schedule: VarianceSchedule, s: float) -> float:
    """``E[W~_t V_s]`` for ``t >= s``: ``s - int_0^s (T + tail(s) - u)/(T + tail(u) - u) du``."""
    T = schedule.T
    if not 0 <= s < T:
        raise InvalidArgument("s must lie in [0, T)")
    ts = schedule.tail(s)
    pts = [b for b in schedule.breaks if 0 < b < s]
    val, _ = quad(lambda u: (T + ts - u) / (T + schedule.tail(u) - u), 0.0, s,
                  points=pts or None, epsabs=1e-13, epsrel=1e-12, limit=200)
    return float(s - val)


def prog_bridge_simulate(schedule: VarianceSchedule, grid: TimeGrid, n_paths: int, seed: int,
                         drift_clip: float = 1e4, *, record=None, start: int = 0, workers: int = 1) -> PathBundle:
    """Brownian motion bridged to the Gaussian signal ``V`` at ``T``.

    ``V_t = V_0 + int_0^t sigma dW1`` with ``V_0 ~ N(0, v0)``, and
    ``dB = dW2 + (V_t - B_t)/(v(t) - t) dt`` by Euler from ``B_0 = 0``,
    stopped one node before ``T`` (held there).  Values are ``B``; channel ``V``.

    ``record`` lists grid times to keep; the output then lives on the sub-grid
    through those times, ``0``, the last node before ``T`` and ``T``.  This
    bounds memory on fine grids.
    """
    _check_paths(n_paths, seed)
    if not drift_clip > 0:
        raise InvalidArgument("drift_clip must be positive")
    if abs(grid.T - schedule.T) > 1e-12 * schedule.T:
        raise InvalidArgument("grid and schedule horizons differ")
    schedule.check_bridge(grid)
    pts, h = grid.points, grid.steps
    N = grid.n_steps
    sq_h = np.sqrt(h)
    sq_v = np.sqrt(np.diff(schedule.cumvar(pts)))
    gap = schedule.v(pts) - pts
    v0 = per_path_normals(seed, "prog-V0", start, n_paths) * np.sqrt(schedule.v0)
    if record is None:
        rec = np.arange(N + 1)
    else:
        rec = np.array(sorted({0, N - 1, N, *(grid.index_of(t) for t in record)}))
    col = np.full(N + 1, -1)
    col[rec] = np.arange(len(rec))

    def block(b, lo, hi):
        off = b * BLOCK + lo - start
        m = hi - lo
        w1 = StepNormals(block_generator(seed, "prog-W1", b), lo, hi)
        w2 = StepNormals(block_generator(seed, "prog-W2", b), lo, hi)
        Vout = np.empty((m, len(rec)))
        Bout = np.empty((m, len(rec)))
        v = v0[off:off + m].copy()
        x = np.zeros(m)
        Vout[:, 0], Bout[:, 0] = v, x
        clips = 0
        for i in range(N):
            z1, z2 = w1.next(N - i), w2.next(N - i)
            if i < N - 1:
                mu = (v - x) / gap[i]
                over = np.abs(mu) > drift_clip
                if over.any():
                    clips += int(over.sum())
                    mu = np.clip(mu, -drift_clip, drift_clip)
                x = x + mu * h[i] + sq_h[i] * z2
            v = v + sq_v[i] * z1
            c = col[i + 1]
            if c >= 0:
                Vout[:, c], Bout[:, c] = v, x
        return Bout, Vout, clips

    parts = map_blocks(block, start, n_paths, workers)
    B = np.concatenate([p[0] for p in parts])
    V = np.concatenate([p[1] for p in parts])
    out_grid = grid if record is None else TimeGrid(pts[rec], refinement="subgrid")
    meta = _base_meta(seed, start, n_paths, grid, process="prog-bridge", v0=schedule.v0,
                      terminal_index=int(col[N - 1]), clip_events=int(sum(p[2] for p in parts)))
    return PathBundle(out_grid, B, channels={"V": V}, meta=meta)
