"""Finance applications: structural default times and the Kyle-Back
equilibrium order flow with its hitting-time diagnostics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidArgument
from .initial import _alpha
from .paths import (
    JumpLaw,
    PathBundle,
    TimeGrid,
    _check_paths,
    make_grid,
    sample_hitting_time_unit,
    simulate_poisson,
    simulate_sde_euler,
)
from .rng import BLOCK, block_generator, map_blocks

__all__ = [
    "StructuralModel",
    "Curve",
    "DefaultResult",
    "default_times_by_monitoring",
    "structural_default_simulate",
    "default_prob_curve",
    "KyleBackConfig",
    "KyleBackResult",
    "kyle_back_simulate",
]


# --------------------------------------------------------------------------
# structural default


@dataclass(frozen=True)
class StructuralModel:
    """Firm value ``V_t = V0 exp(mu t + sigma W_t + J_t)`` with default at the
    first monitoring time where ``V < K``.

    ``jumps`` is an optional ``(rate, JumpLaw)`` pair for the compound Poisson
    part ``J``.
    """

    mu: float = 0.0
    sigma: float = 1.0
    V0: float = 1.0
    K: float = math.exp(-1.0)
    T: float = 1.0
    jumps: tuple[float, JumpLaw] | None = None

    def __post_init__(self):
        if not self.V0 > 0:
            raise InvalidArgument("V0 must be positive")
        if not self.K > 0:
            raise InvalidArgument("barrier K must be positive")
        if not self.K < self.V0:
            raise InvalidArgument(f"barrier K = {self.K:g} must lie below V0 = {self.V0:g}")
        if self.sigma < 0:
            raise InvalidArgument("sigma must be non-negative")
        if not self.T > 0:
            raise InvalidArgument("horizon must be positive")
        if self.jumps is not None and not self.jumps[0] > 0:
            raise InvalidArgument("jump rate must be positive")

    @property
    def log_barrier(self) -> float:
        """Barrier for the log-return ``log(V/V0)``."""
        return math.log(self.K / self.V0)


@dataclass(frozen=True)
class Curve:
    """Pointwise default-probability estimate with CLT bands."""

    t: np.ndarray
    estimate: np.ndarray
    stderr: np.ndarray
    band: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("t", "estimate", "band"))
            for row in zip(self.t, self.estimate, self.band):
                w.writerow([repr(float(v)) for v in row])


@dataclass(frozen=True)
class DefaultResult:
    tau: np.ndarray
    curve: Curve
    survival: np.ndarray


def default_prob_curve(tau, grid: TimeGrid, z: float = 1.96) -> Curve:
    """``P(tau <= t)`` on the grid nodes with ``z``-sigma binomial bands.

    Non-defaulted paths carry ``tau = inf``.
    """
    tau = np.sort(np.asarray(tau, dtype=float))
    n = len(tau)
    t = np.asarray(grid.points, dtype=float)
    if n == 0:
        zero = np.zeros_like(t)
        return Curve(t, zero, zero.copy(), zero.copy())
    p = np.searchsorted(tau, t, side="right") / n
    se = np.sqrt(p * (1 - p) / n)
    return Curve(t, p, se, z * se)


def default_times_by_monitoring(model: StructuralModel, grid: TimeGrid, n_paths: int, seed: int,
                                strides: Sequence[int] = (1,), *, start: int = 0, workers: int = 1,
                                batch: int = 256) -> dict[int, np.ndarray]:
    """Default times of the same paths monitored every ``k``-th node, for each ``k`` in ``strides``.

    Coarser monitoring sees a subset of the nodes, so per path the default
    time can only move later as the stride grows.  ``inf`` marks survival.
    """
    _check_paths(n_paths, seed)
    if abs(grid.T - model.T) > 1e-12 * model.T:
        raise InvalidArgument("grid horizon must equal the model horizon")
    strides = tuple(int(k) for k in strides)
    if any(k < 1 or grid.n_steps % k for k in strides):
        raise InvalidArgument("strides must be positive divisors of the step count")
    N, h, pts = grid.n_steps, grid.steps, grid.points
    drift = model.mu * h
    vol = model.sigma * np.sqrt(h)
    lb = model.log_barrier
    jumps = None
    if model.jumps is not None:
        lam, law = model.jumps
        jumps = simulate_poisson(lam, model.T, n_paths, seed, grid=TimeGrid(np.array([0.0, model.T])),
                                 jump_law=law, start=start, workers=workers).jump_times

    def block(b, lo, hi):
        m = hi - lo
        off = b * BLOCK + lo - start
        gen = block_generator(seed, "structural", b)
        if jumps is not None:
            rows = np.arange(off, off + m)
            sub = jumps.take(rows)
            node = np.searchsorted(pts, sub.flat, side="left")  # first node at or after the jump
            jpath = sub.path_ids()
            jmark = sub.marks
        x = np.zeros(m)
        first = {k: np.full(m, np.inf) for k in strides}
        i0 = 0
        while i0 < N:
            k_rows = min(batch, N - i0)
            z = gen.standard_normal((k_rows, BLOCK))[:, lo:hi]
            inc = drift[i0:i0 + k_rows, None] + vol[i0:i0 + k_rows, None] * z
            if jumps is not None:
                sel = (node > i0) & (node <= i0 + k_rows)
                if sel.any():
                    np.add.at(inc, (node[sel] - i0 - 1, jpath[sel]), jmark[sel])
            path = x + np.cumsum(inc, axis=0)  # nodes i0+1 .. i0+k_rows
            x = path[-1]
            nodes = np.arange(i0 + 1, i0 + k_rows + 1)
            below = path < lb
            for k in strides:
                r = (nodes % k) == 0
                if not r.any():
                    continue
                bk = below[r]
                hit = bk.any(axis=0) & np.isinf(first[k])
                if hit.any():
                    idx = np.argmax(bk[:, hit], axis=0)
                    first[k][hit] = pts[nodes[r][idx]]
            i0 += k_rows
        return first

    parts = map_blocks(block, start, n_paths, workers)
    return {k: np.concatenate([p[k] for p in parts]) for k in strides}


def structural_default_simulate(model: StructuralModel, grid: TimeGrid, n_paths: int, seed: int, *,
                                start: int = 0, workers: int = 1) -> DefaultResult:
    """Default times monitored at every node, the default curve and survival ``P(tau > t)``."""
    tau = default_times_by_monitoring(model, grid, n_paths, seed, (1,), start=start, workers=workers)[1]
    curve = default_prob_curve(tau, grid)
    return DefaultResult(tau, curve, 1.0 - curve.estimate)


# --------------------------------------------------------------------------
# Kyle-Back


@dataclass(frozen=True)
class KyleBackConfig:
    """Equilibrium order-flow simulation on ``[0, 1]`` with default barrier -1.

    ``drift_variant`` is ``"g4_consistent"`` (drift of Brownian motion given
    its passage time to -1, active before it) or ``"as_printed"`` (the
    literal display: the same expression with ``1 - R`` in the second term,
    switched on from the default time onward).  ``drift_clip`` defaults to
    ``6 / sqrt(h_max)``, which caps the drift displacement of one step at six
    noise standard deviations.
    """

    n_steps: int = 4096
    n_paths: int = 20480
    seed: int = 7
    drift_variant: str = "g4_consistent"
    refinement: str = "uniform"
    beta: float | None = None
    horizon: float = 1.0
    barrier: float = -1.0
    drift_clip: float | None = None

    def __post_init__(self):
        if self.horizon != 1.0:
            raise InvalidArgument("the Kyle-Back horizon is fixed at 1")
        if self.barrier != -1.0:
            raise InvalidArgument("the Kyle-Back barrier is fixed at -1")
        if self.drift_variant not in ("g4_consistent", "as_printed"):
            raise InvalidArgument(f"unknown drift_variant {self.drift_variant!r}")
        _check_paths(self.n_paths, self.seed)

    def grid(self) -> TimeGrid:
        return make_grid(self.horizon, self.n_steps, self.refinement, self.beta)

    def clip(self) -> float:
        if self.drift_clip is not None:
            return float(self.drift_clip)
        return 6.0 / math.sqrt(float(np.max(self.grid().steps)))


@dataclass(frozen=True)
class KyleBackResult:
    bundle: PathBundle
    tau: np.ndarray
    hit_times: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def kyle_back_simulate(config: KyleBackConfig, *, free_after_horizon: bool = False, keep_times=None,
                       start: int = 0, n_paths: int | None = None, workers: int = 1) -> KyleBackResult:
    """Simulate the equilibrium total order ``R*``.

    Default times come from :func:`sample_hitting_time_unit` (``tau = 1/Z^2``
    can exceed the horizon).  Under ``g4_consistent`` every path follows
    ``dR = dB + (1/(1+R) - (1+R)/(tau - t)) dt`` before ``tau``, Euler
    overshoots below -1 are mirrored back, and the path is restarted at -1
    at ``tau`` to continue driftless.  ``free_after_horizon`` switches the
    drift off on paths with ``tau > 1`` (a negative control: those paths then
    hit -1 too often).  ``as_printed`` integrates the literal display with
    clipping only.

    Aux channels: ``tau``, ``hit_time`` (first node at which the trajectory
    has reached -1, ``inf`` if never) and ``R_pre`` (value at the last node
    before ``tau``, ``nan`` when ``tau > 1``).  ``keep_times`` restricts the
    stored paths to those times.
    """
    n = config.n_paths if n_paths is None else n_paths
    grid = config.grid()
    tau = sample_hitting_time_unit(n, config.seed, start=start)
    tau = np.minimum(tau, 1e300)
    pts = grid.points
    clip = config.clip()
    if config.drift_variant == "g4_consistent":
        conditioned = (tau <= config.horizon) if free_after_horizon else np.ones(n, dtype=bool)

        def drift(t, x, aux):
            tt = aux["tau"]
            on = (t < tt) & (aux["conditioned"] > 0)
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(on, _alpha(t, x, tt), 0.0)

        barrier = np.where(conditioned, config.barrier, np.nan)
        bundle = simulate_sde_euler(drift, lambda t, x: 1.0, grid, n, config.seed, clip,
                                    aux={"tau": tau, "conditioned": conditioned.astype(float)},
                                    singular_time=tau, barrier=barrier,
                                    barrier_mode="reflect", fill_after=config.barrier, restart=True,
                                    start=start, workers=workers, stream="kyle")
    else:
        def drift(t, x, aux):
            tt = aux["tau"]
            with np.errstate(divide="ignore", invalid="ignore"):
                d = 1.0 / (1.0 + x) - (1.0 - x) / (tt - t)
            d = np.where(t >= tt, d, 0.0)
            return np.where(np.isfinite(d), d, np.sign(d) * clip * 2)

        bundle = simulate_sde_euler(drift, lambda t, x: 1.0, grid, n, config.seed, clip,
                                    aux={"tau": tau}, start=start, workers=workers, stream="kyle")

    R = bundle.values
    rows = np.arange(n)
    below = R <= config.barrier
    node_hit = np.where(below.any(axis=1), pts[np.argmax(below, axis=1)], np.inf)
    defaulted = tau <= config.horizon
    st = np.clip(np.searchsorted(pts, tau, side="left") - 1, 0, grid.n_steps)  # last node before tau
    r_pre = np.where(defaulted, R[rows, st], np.nan)
    if config.drift_variant == "g4_consistent":
        # the trajectory sits at -1 at tau, inside (t_st, t_st+1]
        reached = np.where(defaulted, pts[np.minimum(st + 1, grid.n_steps)], np.inf)
        hit = np.minimum(node_hit, reached)
    else:
        hit = node_hit
    bundle = bundle.with_aux(hit_time=hit, R_pre=r_pre)
    diagnostics = {
        "variant": config.drift_variant,
        "free_after_horizon": free_after_horizon,
        "defaulted_fraction": float(defaulted.mean()),
        "clip_events": int(bundle.meta.get("clip_events", 0)),
        "barrier_events": int(bundle.meta.get("barrier_events", 0)),
        "early_hits": int(np.sum(node_hit < np.where(defaulted, tau, np.inf))),
    }
    if keep_times is not None:
        bundle = bundle.restrict(keep_times)
    return KyleBackResult(bundle, tau, hit, diagnostics)
