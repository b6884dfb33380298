"""Seedable path generation: time grids, Brownian and Poisson paths, Lévy
models, hitting times and an Euler-Maruyama engine."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .errors import InvalidArgument, NumericFailure
from .rng import BLOCK, StepNormals, block_generator, map_blocks, per_path_normals

__all__ = [
    "TimeGrid",
    "JumpTimes",
    "PathBundle",
    "JumpLaw",
    "LevyModel",
    "make_grid",
    "geometric_beta",
    "simulate_brownian",
    "simulate_poisson",
    "simulate_poisson_conditional",
    "simulate_ou",
    "sample_hitting_time_unit",
    "simulate_sde_euler",
]


def _frozen(a: Any) -> np.ndarray:
    """Read-only view; no copy is made."""
    a = np.asarray(a).view()
    a.setflags(write=False)
    return a


# --------------------------------------------------------------------------
# grids


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing discretisation ``0 = t_0 < ... < t_N = T``."""

    points: np.ndarray
    refinement: str = "uniform"
    beta: float | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or len(pts) < 2:
            raise InvalidArgument("a grid needs at least two points")
        if pts[0] != 0.0:
            raise InvalidArgument("grid must start at 0")
        if not np.all(np.diff(pts) > 0):
            raise InvalidArgument("grid points must be strictly increasing")
        object.__setattr__(self, "points", _frozen(pts))

    @property
    def T(self) -> float:
        return float(self.points[-1])

    @property
    def n_steps(self) -> int:
        return len(self.points) - 1

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.points)

    def index_of(self, t: float) -> int:
        tol = 1e-9 * max(self.T, 1.0)
        i = int(np.searchsorted(self.points, t - tol))
        if i >= len(self.points) or abs(self.points[i] - t) > tol:
            raise InvalidArgument(f"time {t!r} is not a grid point")
        return i

    def nearest(self, t: float) -> float:
        return float(self.points[np.argmin(np.abs(self.points - t))])

    def summary(self) -> str:
        s = f"{self.refinement}[0,{self.T:g}] n={self.n_steps}"
        if self.beta is not None:
            s += f" beta={self.beta:.6g}"
        return s

    def restrict(self, times: Sequence[float]) -> tuple["TimeGrid", np.ndarray]:
        """Sub-grid through ``times`` (plus both endpoints) and the kept indices."""
        idx = sorted({0, self.n_steps, *(self.index_of(t) for t in times)})
        idx = np.array(idx)
        return TimeGrid(self.points[idx], refinement="subgrid"), idx


def geometric_beta(n_steps: int, end_ratio: float) -> float:
    """Ratio β such that the last of ``n_steps`` geometric steps is ``end_ratio`` times the first."""
    if n_steps < 2 or not 0 < end_ratio < 1:
        raise InvalidArgument("need n_steps >= 2 and end_ratio in (0, 1)")
    return float(end_ratio ** (1.0 / (n_steps - 1)))


def make_grid(T: float, n_steps: int, refinement: str = "uniform", beta: float | None = None) -> TimeGrid:
    """Uniform grid on ``[0, T]`` or one whose steps shrink geometrically toward ``T``.

    In geometric mode step ``i`` has length ``h0 * beta**i``.
    """
    if not T > 0:
        raise InvalidArgument(f"horizon must be positive, got {T!r}")
    if int(n_steps) != n_steps or n_steps < 2:
        raise InvalidArgument(f"n_steps must be an integer >= 2, got {n_steps!r}")
    n_steps = int(n_steps)
    i = np.arange(n_steps + 1, dtype=float)
    if refinement == "uniform":
        pts = T * i / n_steps
        beta = None
    elif refinement == "geometric":
        if beta is None or not 0 < beta < 1:
            raise InvalidArgument(f"geometric refinement needs beta in (0, 1), got {beta!r}")
        lb = math.log(beta)
        pts = T * np.expm1(i * lb) / math.expm1(n_steps * lb)
    else:
        raise InvalidArgument(f"unknown refinement {refinement!r}")
    pts[0], pts[-1] = 0.0, T
    if not np.all(np.diff(pts) > 0):
        raise InvalidArgument("grid collapses in floating point; use a ratio closer to 1")
    return TimeGrid(pts, refinement=refinement, beta=beta)


# --------------------------------------------------------------------------
# bundles


@dataclass(frozen=True, eq=False)
class JumpTimes:
    """Ragged per-path jump epochs in compressed form.

    Path ``p`` owns ``flat[offsets[p]:offsets[p+1]]``; ``marks`` (jump sizes)
    share the layout and are ``None`` for unit jumps.
    """

    flat: np.ndarray
    offsets: np.ndarray
    marks: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "flat", _frozen(np.asarray(self.flat, dtype=float)))
        object.__setattr__(self, "offsets", _frozen(np.asarray(self.offsets, dtype=np.int64)))
        if self.marks is not None:
            object.__setattr__(self, "marks", _frozen(np.asarray(self.marks, dtype=float)))

    @property
    def n_paths(self) -> int:
        return len(self.offsets) - 1

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    def path(self, p: int) -> np.ndarray:
        return self.flat[self.offsets[p]:self.offsets[p + 1]]

    def path_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_paths), self.counts)

    def rank(self) -> np.ndarray:
        """0-based position of each jump within its path."""
        return np.arange(len(self.flat)) - np.repeat(self.offsets[:-1], self.counts)

    def cumulative(self, points: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
        """Sum of ``weights`` over jumps ``<= t`` for every path and every ``t`` in ``points``."""
        P = len(points)
        node = np.searchsorted(points, self.flat, side="left")
        key = self.path_ids() * (P + 1) + node
        w = np.ones(len(self.flat)) if weights is None else weights
        hist = np.bincount(key, weights=w, minlength=self.n_paths * (P + 1))
        return np.cumsum(hist.reshape(self.n_paths, P + 1)[:, :P], axis=1)

    def take(self, rows: np.ndarray) -> "JumpTimes":
        rows = np.asarray(rows)
        counts = self.counts[rows]
        idx = np.concatenate([np.arange(self.offsets[r], self.offsets[r + 1]) for r in rows]) if len(rows) else np.array([], int)
        marks = None if self.marks is None else self.marks[idx]
        return JumpTimes(self.flat[idx], np.concatenate([[0], np.cumsum(counts)]), marks)

    @staticmethod
    def concat(parts: Sequence["JumpTimes"]) -> "JumpTimes":
        flat = np.concatenate([p.flat for p in parts])
        counts = np.concatenate([p.counts for p in parts])
        marks = None if parts[0].marks is None else np.concatenate([p.marks for p in parts])
        return JumpTimes(flat, np.concatenate([[0], np.cumsum(counts)]), marks)


@dataclass(frozen=True, eq=False)
class PathBundle:
    """Simulated paths on a common grid.

    ``values`` has shape ``(n_paths, len(grid.points))``.  ``channels`` hold
    further per-path processes on the same grid (a compensator, a signal),
    ``aux`` per-path scalars such as the revealed variable, and ``meta``
    reproducibility data and engine diagnostics.
    """

    grid: TimeGrid
    values: np.ndarray
    aux: Mapping[str, np.ndarray] = field(default_factory=dict)
    jump_times: JumpTimes | None = None
    channels: Mapping[str, np.ndarray] = field(default_factory=dict)
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        values = _frozen(np.asarray(self.values, dtype=float))
        if values.ndim != 2 or values.shape[1] != len(self.grid.points):
            raise InvalidArgument("values must have shape (n_paths, n_grid_points)")
        object.__setattr__(self, "values", values)
        n = values.shape[0]
        aux = {k: _frozen(v) for k, v in self.aux.items()}
        for k, v in aux.items():
            if v.shape != (n,):
                raise InvalidArgument(f"aux {k!r} must hold one scalar per path")
        chans = {k: _frozen(np.asarray(v, dtype=float)) for k, v in self.channels.items()}
        for k, v in chans.items():
            if v.shape != values.shape:
                raise InvalidArgument(f"channel {k!r} must match the values shape")
        if self.jump_times is not None and self.jump_times.n_paths != n:
            raise InvalidArgument("jump_times must cover every path")
        object.__setattr__(self, "aux", aux)
        object.__setattr__(self, "channels", chans)
        object.__setattr__(self, "meta", dict(self.meta))

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    def with_aux(self, **aux: np.ndarray) -> "PathBundle":
        return replace(self, aux={**self.aux, **aux})

    def with_channels(self, **channels: np.ndarray) -> "PathBundle":
        return replace(self, channels={**self.channels, **channels})

    def with_meta(self, **meta: Any) -> "PathBundle":
        return replace(self, meta={**self.meta, **meta})

    def process(self, name: str | None = None) -> np.ndarray:
        """The base values (``None``/``"values"``) or a named channel."""
        if name is None or name == "values":
            return self.values
        try:
            return self.channels[name]
        except KeyError:
            raise InvalidArgument(f"bundle has no channel {name!r}") from None

    def at(self, t: float, name: str | None = None) -> np.ndarray:
        return self.process(name)[:, self.grid.index_of(t)]

    def terminal_index(self) -> np.ndarray:
        """Per-path index of the last node before any singular time."""
        ti = self.meta.get("terminal_index", self.grid.n_steps)
        return np.broadcast_to(np.asarray(ti), (self.n_paths,))

    def restrict(self, times: Sequence[float]) -> "PathBundle":
        """Keep only the nodes at ``times`` (and the endpoints)."""
        sub, idx = self.grid.restrict(times)
        meta = dict(self.meta)
        meta.pop("terminal_index", None)
        return PathBundle(
            grid=sub,
            values=self.values[:, idx],
            aux=self.aux,
            jump_times=self.jump_times,
            channels={k: v[:, idx] for k, v in self.channels.items()},
            meta={**meta, "source_grid": self.grid.summary()},
        )

    @staticmethod
    def concat(parts: Sequence["PathBundle"]) -> "PathBundle":
        """Stack bundles over disjoint path ranges, in the given order."""
        first = parts[0]
        meta = dict(first.meta)
        for key in ("clip_events", "barrier_events"):
            if key in meta:
                meta[key] = int(sum(p.meta.get(key, 0) for p in parts))
        for key in ("terminal_index", "absorbed_at"):
            if key in meta and np.ndim(meta[key]):
                meta[key] = np.concatenate([np.broadcast_to(p.meta[key], (p.n_paths,)) for p in parts])
        meta["n_paths"] = sum(p.n_paths for p in parts)
        jt = None if first.jump_times is None else JumpTimes.concat([p.jump_times for p in parts])
        return PathBundle(
            grid=first.grid,
            values=np.concatenate([p.values for p in parts]),
            aux={k: np.concatenate([p.aux[k] for p in parts]) for k in first.aux},
            jump_times=jt,
            channels={k: np.concatenate([p.channels[k] for p in parts]) for k in first.channels},
            meta=meta,
        )


def _base_meta(seed: int, start: int, n_paths: int, grid: TimeGrid, **extra) -> dict:
    return {"seed": int(seed), "start": int(start), "n_paths": int(n_paths), "grid": grid.summary(), **extra}


def _check_paths(n_paths: int, seed: int) -> None:
    if int(n_paths) != n_paths or n_paths < 1:
        raise InvalidArgument(f"n_paths must be a positive integer, got {n_paths!r}")
    if int(seed) != seed or not 0 <= seed < 2**64:
        raise InvalidArgument(f"seed must be an integer in [0, 2**64), got {seed!r}")


# --------------------------------------------------------------------------
# Brownian motion


def simulate_brownian(grid: TimeGrid, n_paths: int, seed: int, *, start: int = 0, workers: int = 1,
                      stream: str = "brownian") -> PathBundle:
    """Standard Brownian paths on ``grid`` started at 0."""
    _check_paths(n_paths, seed)
    sq = np.sqrt(grid.steps)[:, None]

    def block(b, lo, hi):
        z = block_generator(seed, stream, b).standard_normal((grid.n_steps, BLOCK))[:, lo:hi]
        out = np.zeros((grid.n_steps + 1, hi - lo))
        np.cumsum(sq * z, axis=0, out=out[1:])
        return out.T

    values = np.concatenate(map_blocks(block, start, n_paths, workers))
    return PathBundle(grid, values, meta=_base_meta(seed, start, n_paths, grid, process="brownian"))


# --------------------------------------------------------------------------
# Poisson processes


@dataclass(frozen=True)
class JumpLaw:
    """Jump-size law of a compound Poisson process."""

    kind: str = "constant"  # "normal" | "constant"
    mu: float = 0.0
    sigma: float = 1.0
    c: float = 1.0

    def __post_init__(self):
        if self.kind not in ("normal", "constant"):
            raise InvalidArgument(f"unknown jump law {self.kind!r}")
        if self.kind == "normal" and self.sigma < 0:
            raise InvalidArgument("jump sigma must be >= 0")

    def sample(self, gen: np.random.Generator, shape) -> np.ndarray:
        if self.kind == "constant":
            return np.full(shape, float(self.c))
        return self.mu + self.sigma * gen.standard_normal(shape)

    def cf(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.kind == "constant":
            return np.exp(1j * self.c * theta)
        return np.exp(1j * self.mu * theta - 0.5 * self.sigma**2 * theta**2)

    def cf_derivative(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.kind == "constant":
            return 1j * self.c * self.cf(theta)
        return (1j * self.mu - self.sigma**2 * theta) * self.cf(theta)


def _arrivals(gen: np.random.Generator, lam: float, T: float, min_jumps: int) -> np.ndarray:
    """Cumulative exponential gaps for a whole block, extended in rounds until
    every path has passed ``T`` and collected ``min_jumps`` arrivals."""
    k = int(math.ceil(lam * T + 6.0 * math.sqrt(lam * T) + 8)) + min_jumps
    rounds, last = [], np.zeros(BLOCK)
    while True:
        times = last[:, None] + np.cumsum(gen.exponential(1.0 / lam, size=(BLOCK, k)), axis=1)
        rounds.append(times)
        last = times[:, -1]
        if np.all(last > T) and sum(r.shape[1] for r in rounds) >= min_jumps:
            return np.concatenate(rounds, axis=1)


def _poisson_bundle(grid: TimeGrid, times: np.ndarray, inside: np.ndarray, marks: np.ndarray | None,
                    aux: dict, meta: dict) -> PathBundle:
    counts = inside.sum(axis=1)
    jt = JumpTimes(times[inside], np.concatenate([[0], np.cumsum(counts)]),
                   None if marks is None else marks[inside])
    w = None if jt.marks is None else jt.marks
    values = jt.cumulative(grid.points, w)
    return PathBundle(grid, values, aux=aux, jump_times=jt, meta=meta)


def simulate_poisson(lam: float, T: float, n_paths: int, seed: int, *, grid: TimeGrid | None = None,
                     min_jumps: int = 0, jump_law: JumpLaw | None = None, start: int = 0,
                     workers: int = 1) -> PathBundle:
    """Poisson (or compound Poisson) paths with exact jump epochs.

    Jump times come from cumulative exponential gaps truncated at ``T``.  With
    ``min_jumps = n`` the arrivals are continued past ``T`` until the ``n``-th
    one is known; it is stored as ``aux["T_n"]``.  ``aux["N_T"]`` is the jump
    count on ``(0, T]``.
    """
    if not lam > 0:
        raise InvalidArgument(f"rate must be positive, got {lam!r}")
    if not T > 0:
        raise InvalidArgument(f"horizon must be positive, got {T!r}")
    _check_paths(n_paths, seed)
    grid = make_grid(T, 256) if grid is None else grid
    if abs(grid.T - T) > 1e-12 * T:
        raise InvalidArgument("grid horizon must equal T")

    def block(b, lo, hi):
        times = _arrivals(block_generator(seed, "poisson", b), lam, T, min_jumps)
        marks = None
        if jump_law is not None:
            marks = jump_law.sample(block_generator(seed, "poisson-marks", b), times.shape)[lo:hi]
        return times[lo:hi], marks

    parts = map_blocks(block, start, n_paths, workers)
    width = max(p[0].shape[1] for p in parts)
    pad = lambda a, v: np.pad(a, ((0, 0), (0, width - a.shape[1])), constant_values=v)
    times = np.concatenate([pad(p[0], np.inf) for p in parts])
    marks = None if jump_law is None else np.concatenate([pad(p[1], 0.0) for p in parts])
    inside = times <= T
    aux = {"N_T": inside.sum(axis=1).astype(float)}
    if min_jumps:
        aux["T_n"] = times[:, min_jumps - 1]
    meta = _base_meta(seed, start, n_paths, grid, process="poisson", lam=lam)
    return _poisson_bundle(grid, times, inside, marks, aux, meta)


def simulate_poisson_conditional(lam: float, T: float, n_paths: int, seed: int, *,
                                 grid: TimeGrid | None = None, start: int = 0, workers: int = 1) -> PathBundle:
    """Poisson paths built the other way round: draw ``N_T`` first, then place
    the jumps as uniform order statistics on ``(0, T]``."""
    if not lam > 0:
        raise InvalidArgument(f"rate must be positive, got {lam!r}")
    _check_paths(n_paths, seed)
    grid = make_grid(T, 256) if grid is None else grid

    def block(b, lo, hi):
        counts = block_generator(seed, "poisson-count", b).poisson(lam * T, BLOCK)
        u = block_generator(seed, "poisson-uniform", b).random((BLOCK, int(counts.max(initial=0))))
        u = T * (1.0 - u)  # (0, T]
        u[np.arange(u.shape[1])[None, :] >= counts[:, None]] = np.inf
        return np.sort(u, axis=1)[lo:hi]

    parts = map_blocks(block, start, n_paths, workers)
    width = max(p.shape[1] for p in parts)
    times = np.concatenate([np.pad(p, ((0, 0), (0, width - p.shape[1])), constant_values=np.inf) for p in parts])
    inside = np.isfinite(times)
    meta = _base_meta(seed, start, n_paths, grid, process="poisson-conditional", lam=lam)
    return _poisson_bundle(grid, times, inside, None, {"N_T": inside.sum(axis=1).astype(float)}, meta)


# --------------------------------------------------------------------------
# Lévy models


@dataclass(frozen=True)
class LevyModel:
    """A Lévy process given by its characteristic exponent ``psi``,
    ``E[exp(i theta Z_t)] = exp(t psi(theta))``."""

    kind: str
    lam: float | None = None
    mu: float = 0.0
    jump: JumpLaw | None = None

    def __post_init__(self):
        if self.kind not in ("brownian", "poisson", "compound_poisson", "brownian_with_drift"):
            raise InvalidArgument(f"unknown Lévy model {self.kind!r}")
        if self.kind in ("poisson", "compound_poisson") and not (self.lam and self.lam > 0):
            raise InvalidArgument("jump models need a positive rate")
        if self.kind == "compound_poisson" and self.jump is None:
            raise InvalidArgument("compound Poisson needs a jump law")

    @classmethod
    def brownian(cls) -> "LevyModel":
        return cls("brownian")

    @classmethod
    def poisson(cls, lam: float) -> "LevyModel":
        return cls("poisson", lam=lam)

    @classmethod
    def compound_poisson(cls, lam: float, jump: JumpLaw) -> "LevyModel":
        return cls("compound_poisson", lam=lam, jump=jump)

    @classmethod
    def brownian_with_drift(cls, mu: float) -> "LevyModel":
        return cls("brownian_with_drift", mu=mu)

    @property
    def has_jumps(self) -> bool:
        return self.kind in ("poisson", "compound_poisson")

    def exponent(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.kind == "brownian":
            return -0.5 * theta**2 + 0j
        if self.kind == "brownian_with_drift":
            return 1j * self.mu * theta - 0.5 * theta**2
        if self.kind == "poisson":
            return self.lam * (np.exp(1j * theta) - 1.0)
        return self.lam * (self.jump.cf(theta) - 1.0)

    def exponent_derivative(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.kind == "brownian":
            return -theta + 0j
        if self.kind == "brownian_with_drift":
            return 1j * self.mu - theta
        if self.kind == "poisson":
            return 1j * self.lam * np.exp(1j * theta)
        return self.lam * self.jump.cf_derivative(theta)

    def simulate(self, grid: TimeGrid, n_paths: int, seed: int, *, start: int = 0, workers: int = 1) -> PathBundle:
        if self.kind == "brownian":
            return simulate_brownian(grid, n_paths, seed, start=start, workers=workers)
        if self.kind == "brownian_with_drift":
            b = simulate_brownian(grid, n_paths, seed, start=start, workers=workers)
            return replace(b, values=b.values + self.mu * grid.points[None, :])
        law = JumpLaw("constant", c=1.0) if self.kind == "poisson" else self.jump
        return simulate_poisson(self.lam, grid.T, n_paths, seed, grid=grid,
                                jump_law=None if self.kind == "poisson" else law,
                                start=start, workers=workers)


# --------------------------------------------------------------------------
# other samplers


def simulate_ou(a: float, y0: float, grid: TimeGrid, n_paths: int, seed: int, *, start: int = 0,
                workers: int = 1) -> PathBundle:
    """Exact Ornstein-Uhlenbeck paths ``dY = -a Y dt + dB`` on the grid nodes."""
    if not a > 0:
        raise InvalidArgument("mean reversion must be positive")
    _check_paths(n_paths, seed)
    h = grid.steps
    decay = np.exp(-a * h)
    sd = np.sqrt(-np.expm1(-2 * a * h) / (2 * a))

    def block(b, lo, hi):
        z = block_generator(seed, "ou", b).standard_normal((grid.n_steps, BLOCK))[:, lo:hi]
        out = np.empty((grid.n_steps + 1, hi - lo))
        out[0] = y0
        for i in range(grid.n_steps):
            out[i + 1] = decay[i] * out[i] + sd[i] * z[i]
        return out.T

    values = np.concatenate(map_blocks(block, start, n_paths, workers))
    return PathBundle(grid, values, meta=_base_meta(seed, start, n_paths, grid, process="ou", a=a))


def sample_hitting_time_unit(n: int, seed: int, *, start: int = 0) -> np.ndarray:
    """First passage times of standard Brownian motion to level -1.

    Uses ``tau = 1/Z**2`` with ``Z`` standard normal, whose law is
    ``P(tau <= t) = 2 Phi(-1/sqrt(t))``.
    """
    _check_paths(n, seed)
    z = per_path_normals(seed, "hitting", start, n)
    with np.errstate(divide="ignore"):
        return 1.0 / (z * z)


# --------------------------------------------------------------------------
# Euler-Maruyama


def simulate_sde_euler(
    drift: Callable[[Any, np.ndarray, Mapping[str, np.ndarray]], Any],
    diffusion: Callable[[Any, np.ndarray], Any],
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    drift_clip: float = 1e4,
    *,
    x0: float | np.ndarray = 0.0,
    aux: Mapping[str, np.ndarray] | None = None,
    time_scale: float | np.ndarray | None = None,
    singular_time: float | np.ndarray | None = None,
    barrier: float | np.ndarray | None = None,
    barrier_mode: str = "absorb",
    fill_after: float | None = None,
    restart: bool = False,
    start: int = 0,
    workers: int = 1,
    stream: str = "brownian",
) -> PathBundle:
    """Explicit Euler-Maruyama for ``dX = drift(t, X, aux) dt + diffusion(t, X) dW``.

    Per-path options:

    * ``time_scale`` stretches the grid per path (node times ``scale * t_i``),
      which lets one unit grid refined toward its end serve paths whose
      singular time differs.
    * ``singular_time``: a path is integrated only up to its last node strictly
      before this time; later nodes hold that value, or ``fill_after``.
    * ``barrier``: a path stepping to or below it before its singular time is
      absorbed there (``barrier_mode="absorb"``) or mirrored back above it
      (``"reflect"``, the symmetrized scheme for processes that cannot reach
      the barrier before the singular time).  Counts go to
      ``meta["barrier_events"]``.  A per-path array is accepted; ``nan``
      entries switch the barrier off for that path.
    * ``restart``: instead of holding, a path is restarted from ``fill_after``
      at its singular time and integrated to the end of the grid; the drift
      callback is then responsible for what happens after that time.

    The drift is clamped to ``[-drift_clip, drift_clip]``; clamp events are
    counted in ``meta["clip_events"]``.  Non-finite drift or diffusion raises
    :class:`NumericFailure` naming the node.  With ``stream="brownian"``, zero
    drift and unit diffusion the output matches :func:`simulate_brownian`
    bit for bit.
    """
    _check_paths(n_paths, seed)
    if not drift_clip > 0:
        raise InvalidArgument("drift_clip must be positive")
    N = grid.n_steps
    aux = {k: np.asarray(v, dtype=float) for k, v in (aux or {}).items()}
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (n_paths,))
    scale = None if time_scale is None else np.broadcast_to(np.asarray(time_scale, dtype=float), (n_paths,))
    if scale is not None and not np.all(scale > 0):
        raise InvalidArgument("time_scale must be positive")

    if barrier_mode not in ("absorb", "reflect"):
        raise InvalidArgument(f"unknown barrier_mode {barrier_mode!r}")
    if restart and (singular_time is None or fill_after is None):
        raise InvalidArgument("restart needs a singular time and a restart value")
    rel = np.full(n_paths, np.inf)
    if singular_time is None:
        stop = np.full(n_paths, N)
    else:
        sing = np.broadcast_to(np.asarray(singular_time, dtype=float), (n_paths,))
        rel = np.array(sing if scale is None else sing / scale, dtype=float)
        # last node strictly before the singular time; a few ulps of slack
        # absorb the rounding in sing / scale
        tol = 8 * np.finfo(float).eps * max(grid.T, 1.0)
        stop = np.searchsorted(grid.points, rel - tol, side="left") - 1
        if np.any(stop < 0):
            raise InvalidArgument("singular time must lie after t = 0")
        stop = np.minimum(stop, N)

    pts, steps = grid.points, grid.steps
    bar_all = None if barrier is None else np.broadcast_to(np.asarray(barrier, dtype=float), (n_paths,))

    def block(b, lo, hi):
        off = b * BLOCK + lo - start
        m = hi - lo
        sl = slice(off, off + m)
        x = x0[sl].copy()
        a = {k: v[sl] for k, v in aux.items()}
        sc = np.ones(m) if scale is None else scale[sl]
        st, sing_rel = stop[sl], rel[sl]
        bar = None if bar_all is None else bar_all[sl]
        absorbed_at = np.full(m, -1)
        out = np.empty((m, N + 1))
        out[:, 0] = x
        normals = StepNormals(block_generator(seed, stream, b), lo, hi)
        clips = events = 0
        for i in range(N):
            z = normals.next(N - i)
            pre = st > i
            if restart:
                active = (pre & (absorbed_at < 0)) | ~pre
                restarting = st == i
                if restarting.any():
                    x[restarting] = fill_after
            else:
                active = pre & (absorbed_at < 0)
            if not active.any():
                out[:, i + 1] = x
                continue
            full = active.all()
            idx = slice(None) if full else np.flatnonzero(active)
            if restart and restarting.any():
                r = restarting[idx]
                t = np.where(r, sing_rel[idx], pts[i]) * sc[idx]
                dt = np.where(r, pts[i + 1] - sing_rel[idx], steps[i]) * sc[idx]
            elif scale is None:
                t, dt = pts[i], steps[i]
            else:
                t, dt = pts[i] * sc[idx], steps[i] * sc[idx]
            xa, za = x[idx], z[idx]
            aa = a if full else {k: v[idx] for k, v in a.items()}
            mu = np.broadcast_to(np.asarray(drift(t, xa, aa), dtype=float), xa.shape)
            sig = np.broadcast_to(np.asarray(diffusion(t, xa), dtype=float), xa.shape)
            bad = ~(np.isfinite(mu) & np.isfinite(sig))
            if bad.any():
                local = np.arange(m)[idx][np.argmax(bad)]
                raise NumericFailure(f"non-finite drift or diffusion at node {i}", node=i,
                                     path=start + off + int(local))
            over = np.abs(mu) > drift_clip
            if over.any():
                clips += int(over.sum())
                mu = np.clip(mu, -drift_clip, drift_clip)
            xn = xa + mu * dt + sig * np.sqrt(dt) * za
            if bar is not None:
                ba = bar[idx]
                hit = (xn <= ba) & pre[idx]
                if hit.any():
                    events += int(hit.sum())
                    if barrier_mode == "reflect":
                        xn = np.where(hit, 2 * ba - xn, xn)
                    else:
                        xn = np.where(hit, ba, xn)
                        absorbed_at[np.arange(m)[idx][hit]] = i + 1
            if full:
                x = xn
            else:
                x[idx] = xn
            out[:, i + 1] = x
        if fill_after is not None and not restart:
            late = np.arange(N + 1)[None, :] > st[:, None]
            out[late] = fill_after
        return out, clips, absorbed_at, st, events

    parts = map_blocks(block, start, n_paths, workers)
    values = np.concatenate([p[0] for p in parts])
    meta = _base_meta(
        seed, start, n_paths, grid, process="euler",
        clip_events=int(sum(p[1] for p in parts)),
        barrier_events=int(sum(p[4] for p in parts)),
        absorbed_at=np.concatenate([p[2] for p in parts]),
        terminal_index=np.concatenate([p[3] for p in parts]),
    )
    if scale is not None:
        meta["time_scale"] = "per-path"
    return PathBundle(grid, values, aux=aux, meta=meta)
