"""Named experiments with pinned defaults, and the validated configuration
that drives them.

Each experiment simulates in chunks of paths (the RNG streams make the
result independent of the chunking), keeps only the times its checks need,
and returns its :class:`~filtlab.verify.TestReport` list plus any tables.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Callable

import numpy as np
from scipy import integrate
from scipy.special import gammainc, ndtr
from scipy.stats import poisson

from .apps import (
    Curve,
    KyleBackConfig,
    StructuralModel,
    default_prob_curve,
    default_times_by_monitoring,
    kyle_back_simulate,
)
from .errors import InvalidArgument
from .initial import (
    bb_compensator,
    bb_density_process,
    bb_density_q,
    bb_drift,
    diffusion_info_drift,
    enlarged_brownian_given_tau,
    gaussian_kernel,
    nth_jump_compensator,
    ou_kernel,
    poisson_bridge_compensator,
    poisson_density_process,
    poisson_density_q,
)
from .paths import (
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
)
from .progressive import VarianceSchedule, peof_innovation_signal_cov, prog_bridge_simulate, simulate_peof
from .rng import BLOCK
from .verify import (
    TestReport,
    cf_identity_test,
    covariance_test,
    ks_test,
    martingale_increment_test,
    mean_test,
    terminal_pinning_test,
)

__all__ = [
    "EXPERIMENTS",
    "ConfigError",
    "ExperimentConfig",
    "ExperimentResult",
    "resolve_config",
    "run_experiment",
    "run_suite",
]

EXPERIMENTS = (
    "bridge-brownian",
    "bridge-poisson",
    "nth-jump",
    "hitting-time",
    "diffusion-drift",
    "noisy-signal",
    "prog-bridge",
    "cf-identity",
    "structural-default",
    "kyle-back",
)


class ConfigError(InvalidArgument):
    """A configuration value outside its allowed range; ``field`` names it."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class ExperimentConfig:
    """Flat experiment configuration.  ``None`` means the experiment's pinned default."""

    experiment: str = "suite"
    seed: int = 7
    n_paths: int | None = None
    n_steps: int | None = None
    refinement: str | None = None
    end_ratio: float | None = None
    horizon: float | None = None
    lam: float | None = None
    n: int | None = None
    mean_reversion: float | None = None
    sigma_levels: list[float] | None = None
    sigma_breaks: list[float] | None = None
    mu: float | None = None
    vol: float | None = None
    K: float | None = None
    V0: float | None = None
    thetas: list[float] | None = None
    drift_variant: str | None = None
    pairs: list[list[float]] | None = None
    ks_samples: int | None = None
    refine_paths: int | None = None
    control_paths: int | None = None
    threshold: float = 4.0
    ks_level: float = 0.01
    workers: int = 1
    output_dir: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = sorted(set(d) - known)
        if extra:
            raise ConfigError(extra[0], "unknown configuration key")
        return cls(**d)


_PAIRS3 = [[0.25, 0.5], [0.25, 0.75], [0.5, 0.75]]

DEFAULTS: dict[str, dict[str, Any]] = {
    "bridge-brownian": dict(n_paths=200_000, n_steps=512, refinement="uniform", horizon=1.0, pairs=_PAIRS3),
    "bridge-poisson": dict(n_paths=200_000, n_steps=512, refinement="uniform", horizon=1.0, lam=1.0,
                           pairs=_PAIRS3),
    "nth-jump": dict(n_paths=200_000, n_steps=512, refinement="uniform", horizon=2.0, lam=2.0, n=3,
                     pairs=[[0.5, 1.0], [0.5, 1.5], [1.0, 2.0]]),
    "hitting-time": dict(n_paths=20_480, n_steps=4096, refinement="geometric", end_ratio=1e-12,
                         horizon=1.0, ks_samples=100_000),
    "diffusion-drift": dict(n_paths=200_000, n_steps=512, refinement="uniform", horizon=1.0,
                            mean_reversion=1.0, pairs=_PAIRS3),
    "noisy-signal": dict(n_paths=200_000, n_steps=512, refinement="uniform", horizon=1.0,
                         sigma_levels=[1.0, 0.5], sigma_breaks=[0.5], pairs=_PAIRS3),
    "prog-bridge": dict(n_paths=20_480, n_steps=4096, refinement="geometric", end_ratio=1e-3, horizon=1.0,
                        sigma_levels=[math.sqrt(0.5), 0.5], sigma_breaks=[0.5], refine_paths=8192),
    "cf-identity": dict(n_paths=200_000, n_steps=512, refinement="uniform", horizon=1.0, lam=1.0,
                        thetas=[0.5, 1.0], pairs=[[0.25, 0.5]]),
    "structural-default": dict(n_paths=20_480, n_steps=16_384, refinement="uniform", horizon=1.0,
                               mu=0.0, vol=1.0, K=math.exp(-1.0), V0=1.0),
    "kyle-back": dict(n_paths=20_480, n_steps=4096, refinement="uniform", horizon=1.0,
                      drift_variant="g4_consistent", control_paths=5120),
}

SHARED = ("experiment", "seed", "threshold", "ks_level", "workers", "output_dir")


# --------------------------------------------------------------------------
# validation


def _is_int(x) -> bool:
    return isinstance(x, (int, np.integer)) and not isinstance(x, bool)


def _is_num(x) -> bool:
    return isinstance(x, (int, float, np.integer, np.floating)) and not isinstance(x, bool) and math.isfinite(x)


def _num_list(name, v, allow_empty=False) -> list[float]:
    if not isinstance(v, (list, tuple)) or (not v and not allow_empty) or not all(_is_num(x) for x in v):
        raise ConfigError(name, "must be a list of finite numbers")
    return [float(x) for x in v]


def resolve_config(cfg: ExperimentConfig) -> ExperimentConfig:
    """Fill pinned defaults and validate every field.  Raises :class:`ConfigError`."""
    if cfg.experiment != "suite" and cfg.experiment not in EXPERIMENTS:
        raise ConfigError("experiment", f"unknown experiment {cfg.experiment!r}")
    if not _is_int(cfg.seed) or not 0 <= cfg.seed < 2**63:
        raise ConfigError("seed", "must be a non-negative integer")
    if not _is_int(cfg.workers) or cfg.workers < 1:
        raise ConfigError("workers", "must be a positive integer")
    if not _is_num(cfg.threshold) or cfg.threshold <= 0:
        raise ConfigError("threshold", "must be positive")
    if not _is_num(cfg.ks_level) or not 0 < cfg.ks_level < 1:
        raise ConfigError("ks_level", "must lie in (0, 1)")
    if cfg.output_dir is not None and not isinstance(cfg.output_dir, str):
        raise ConfigError("output_dir", "must be a path string")
    if cfg.experiment == "suite":
        for f in fields(cfg):
            if f.name not in SHARED and getattr(cfg, f.name) is not None:
                raise ConfigError(f.name, "the suite runs pinned defaults; only seed, threshold, ks_level, "
                                          "workers and output_dir may be set")
        return cfg
    d = DEFAULTS[cfg.experiment]
    allowed = set(d) | set(SHARED) | {"end_ratio"}
    for f in fields(cfg):
        if f.name not in allowed and getattr(cfg, f.name) is not None:
            raise ConfigError(f.name, f"not a parameter of {cfg.experiment}")
    c = replace(cfg, **{k: (getattr(cfg, k) if getattr(cfg, k) is not None else v) for k, v in d.items()})
    if cfg.refinement == "uniform" and cfg.end_ratio is None:
        c = replace(c, end_ratio=None)
    _validate(c)
    return c


def _validate(c: ExperimentConfig) -> None:
    e = c.experiment
    if not _is_int(c.n_paths) or c.n_paths < 2:
        raise ConfigError("n_paths", "must be an integer >= 2")
    if not _is_int(c.n_steps) or c.n_steps < 2:
        raise ConfigError("n_steps", "must be an integer >= 2")
    if c.refinement not in ("uniform", "geometric"):
        raise ConfigError("refinement", "must be 'uniform' or 'geometric'")
    if c.refinement == "geometric":
        if c.end_ratio is None:
            raise ConfigError("end_ratio", "required for geometric grids")
        if not _is_num(c.end_ratio) or not 0 < c.end_ratio <= 1:
            raise ConfigError("end_ratio", "must lie in (0, 1]")
    elif c.end_ratio is not None:
        raise ConfigError("end_ratio", "only meaningful for geometric grids")
    if not _is_num(c.horizon) or c.horizon <= 0:
        raise ConfigError("horizon", "must be positive")
    if e in ("bridge-poisson", "hitting-time", "kyle-back") and c.horizon != 1.0:
        raise ConfigError("horizon", f"{e} is defined on [0, 1]")
    for name in ("lam", "mean_reversion", "vol", "K", "V0"):
        v = getattr(c, name)
        if v is not None and (not _is_num(v) or v <= 0):
            raise ConfigError(name, "must be positive")
    if c.mu is not None and not _is_num(c.mu):
        raise ConfigError("mu", "must be finite")
    if c.K is not None and c.K >= c.V0:
        raise ConfigError("K", "the barrier must lie below V0")
    if c.n is not None and (not _is_int(c.n) or c.n < 1):
        raise ConfigError("n", "must be a positive integer")
    for name in ("ks_samples", "refine_paths", "control_paths"):
        v = getattr(c, name)
        if v is not None and (not _is_int(v) or v < 2):
            raise ConfigError(name, "must be an integer >= 2")
    if c.thetas is not None:
        _num_list("thetas", c.thetas)
    if c.drift_variant is not None and c.drift_variant not in ("g4_consistent", "as_printed"):
        raise ConfigError("drift_variant", "must be 'g4_consistent' or 'as_printed'")
    try:
        grid = _grid(c)
    except InvalidArgument as exc:
        raise ConfigError("n_steps", str(exc)) from None
    if c.pairs is not None:
        if not isinstance(c.pairs, (list, tuple)) or not c.pairs:
            raise ConfigError("pairs", "must be a non-empty list of [s, t]")
        for p in c.pairs:
            if not isinstance(p, (list, tuple)) or len(p) != 2 or not all(_is_num(x) for x in p):
                raise ConfigError("pairs", f"bad pair {p!r}")
            s, t = p
            if not 0 <= s < t <= c.horizon:
                raise ConfigError("pairs", f"need 0 <= s < t <= horizon, got {p!r}")
            if e == "cf-identity":
                if t >= c.horizon:
                    raise ConfigError("pairs", "the cf identity needs t < horizon")
                if len(c.pairs) != 1:
                    raise ConfigError("pairs", "cf-identity takes a single (s, t) pair")
            for x in (s, t):
                try:
                    grid.index_of(x)
                except InvalidArgument:
                    raise ConfigError("pairs", f"time {x:g} is not a grid node") from None
    if c.sigma_levels is not None:
        levels = _num_list("sigma_levels", c.sigma_levels)
        breaks = _num_list("sigma_breaks", c.sigma_breaks or [], allow_empty=True)
        try:
            if e == "prog-bridge":
                VarianceSchedule.bridge(levels, breaks, c.horizon).check_bridge(grid)
            else:
                VarianceSchedule(levels, breaks, c.horizon)
        except InvalidArgument as exc:
            raise ConfigError("sigma_levels", str(exc)) from None
    if e == "structural-default" and c.n_steps % 16:
        raise ConfigError("n_steps", "must be divisible by 16 (monitoring at 1/16, 1/4 and all nodes)")


def _grid(c: ExperimentConfig, n_steps: int | None = None) -> TimeGrid:
    n = c.n_steps if n_steps is None else n_steps
    beta = geometric_beta(n, c.end_ratio) if c.refinement == "geometric" else None
    return make_grid(c.horizon, n, c.refinement, beta)


# --------------------------------------------------------------------------
# plumbing


@dataclass
class ExperimentResult:
    experiment: str
    reports: list[TestReport]
    tables: dict[str, Curve] = field(default_factory=dict)
    diagnostics: dict[str, Any] = field(default_factory=dict)


def _chunked(n_paths: int, size: int, fn: Callable[[int, int], PathBundle]) -> PathBundle:
    return PathBundle.concat([fn(lo, min(size, n_paths - lo)) for lo in range(0, n_paths, size)])


def _pair_times(pairs) -> list[float]:
    return sorted({float(x) for p in pairs for x in p})


def _named(reports: list[TestReport], prefix: str) -> list[TestReport]:
    for r in reports:
        r.name = f"{prefix}/{r.name}"
    return reports


def _deterministic(name: str, error: float, bound: float, seed: int | None = None) -> TestReport:
    """A numerical identity checked to a tolerance, reported as a one-sided check."""
    return TestReport(name, float(error), 0.0, math.nan, float(bound), bool(error <= bound), 0, seed,
                      "deterministic", one_sided=True, estimate=float(error), target=float(bound))


def _significantly_positive(est: TestReport, threshold: float, name: str) -> TestReport:
    """One-sided: passes when the estimate exceeds ``threshold`` standard errors above zero."""
    z = est.estimate / est.stderr if est.stderr > 0 else math.inf
    return TestReport(name, -z, est.stderr, -z, -threshold, bool(-z <= -threshold), est.n_paths, est.seed,
                      est.grid_summary, one_sided=True, estimate=est.estimate, target=0.0)


_ID = {"L": lambda x: np.asarray(x, dtype=float)}
_ONE = {"1": np.ones_like}


# --------------------------------------------------------------------------
# initial enlargements


def _bb_normalisation_error(T: float) -> float:
    """``max |int q(t, b, x) p_T(x) dx - 1|`` over a few states, by quadrature."""
    worst = 0.0
    for t, b in ((0.0, 0.0), (0.25, 0.3), (0.5, -1.0), (0.75, 1.2), (0.9, -0.4)):
        f = lambda x: bb_density_q(t, b, x, T) * math.exp(-x * x / (2 * T)) / math.sqrt(2 * math.pi * T)
        w = 12 * math.sqrt(T - t)  # the mass outside is below 1e-30; further out q * p overflows
        val, _ = integrate.quad(f, b - w, b + w, epsabs=1e-13, epsrel=1e-13, limit=200)
        worst = max(worst, abs(val - 1.0))
    return worst


def _bridge_brownian(c: ExperimentConfig) -> ExperimentResult:
    grid = _grid(c)
    keep = _pair_times(c.pairs)
    xs = (-1.0, 0.0, 1.0)

    def chunk(lo, m):
        b = simulate_brownian(grid, m, c.seed, start=lo, workers=c.workers)
        b = b.with_aux(L=b.values[:, -1].copy())
        ch = {"A": bb_compensator(b, "L")}
        for x in xs:
            ch[f"q[x={x:g}]"] = bb_density_process(b, x)
        return b.with_channels(**ch).restrict(keep)

    b = _chunked(c.n_paths, 2 * BLOCK, chunk)
    pairs = [tuple(p) for p in c.pairs]
    th = c.threshold
    reps = martingale_increment_test(b, "A", "L", pairs, threshold=th, name="compensated")
    reps += martingale_increment_test(b, None, "L", pairs, _ONE, _ID, th, name="uncompensated",
                                      negative_control=True)
    L = b.aux["L"]
    for s, t in pairs:
        reps.append(mean_test(L * (b.at(t) - b.at(s)), t - s, th, name=f"uncompensated-target[s={s:g},t={t:g}]",
                              seed=c.seed, grid_summary=b.meta["grid"]))
    for x in xs:
        reps += martingale_increment_test(b, None, None, pairs, threshold=th, process=f"q[x={x:g}]",
                                          name=f"density[x={x:g}]")
    reps.append(_deterministic("density-normalisation", _bb_normalisation_error(c.horizon), 1e-6))
    return ExperimentResult(c.experiment, reps)


def _poisson_normalisation_error(lam: float) -> float:
    worst = 0.0
    for t, N in ((0.0, 0), (0.3, 1), (0.6, 2), (0.9, 5)):
        k = np.arange(N, N + 41)
        total = math.fsum(poisson_density_q(t, k, N, lam) * poisson.pmf(k, lam))
        worst = max(worst, abs(total - 1.0))
    return worst


def _bridge_poisson(c: ExperimentConfig) -> ExperimentResult:
    # jump epochs are exact, so only the tested times need grid values
    grid, _ = _grid(c).restrict(_pair_times(c.pairs))
    pairs = [tuple(p) for p in c.pairs]
    ks = range(4)

    def chunk_with(sampler):
        def chunk(lo, m):
            b = sampler(c.lam, 1.0, m, c.seed, grid=grid, start=lo, workers=c.workers)
            ch = {"A": poisson_bridge_compensator(b, "N_T"), "A_F": np.broadcast_to(c.lam * grid.points, b.values.shape)}
            for k in ks:
                ch[f"q[k={k}]"] = poisson_density_process(b, k, c.lam)
            return b.with_channels(**ch)
        return chunk

    b = _chunked(c.n_paths, 2 * BLOCK, chunk_with(simulate_poisson))
    th = c.threshold
    reps = martingale_increment_test(b, "A", "N_T", pairs, threshold=th, name="compensated")
    reps += martingale_increment_test(b, "A_F", "N_T", pairs, _ONE, _ID, th, name="uncompensated",
                                      negative_control=True)
    L = b.aux["N_T"]
    for s, t in pairs:
        dX = (b.at(t) - b.at(s)) - c.lam * (t - s)
        reps.append(mean_test(L * dX, c.lam * (t - s), th, name=f"uncompensated-target[s={s:g},t={t:g}]",
                              seed=c.seed, grid_summary=b.meta["grid"]))
    for k in ks:
        reps += martingale_increment_test(b, None, None, pairs, threshold=th, process=f"q[k={k}]",
                                          name=f"density[k={k}]")
    reps.append(_deterministic("density-normalisation", _poisson_normalisation_error(c.lam), 1e-12))
    # second route: paths built from the count and uniform order statistics
    b2 = _chunked(c.n_paths, 2 * BLOCK, chunk_with(simulate_poisson_conditional))
    reps += martingale_increment_test(b2, "A", "N_T", pairs, threshold=th, name="compensated-conditional-route")
    return ExperimentResult(c.experiment, reps)


def _nth_jump(c: ExperimentConfig) -> ExperimentResult:
    grid, _ = _grid(c).restrict(_pair_times(c.pairs))
    pairs = [tuple(p) for p in c.pairs]

    def chunk(lo, m):
        b = simulate_poisson(c.lam, c.horizon, m, c.seed, grid=grid, min_jumps=c.n, start=lo, workers=c.workers)
        return b.with_channels(A=nth_jump_compensator(b, c.n, c.lam),
                               A_nojump=nth_jump_compensator(b, c.n, c.lam, include_jump=False))

    b = _chunked(c.n_paths, 2 * BLOCK, chunk)
    th = c.threshold
    reps = martingale_increment_test(b, "A", "T_n", pairs, threshold=th, name="compensated")
    reps += martingale_increment_test(b, "A_nojump", "T_n", pairs, _ONE, _ONE, th, name="without-jump-term",
                                      negative_control=True)
    n, lam = c.n, c.lam
    reps.append(ks_test(b.aux["T_n"], lambda x: gammainc(n, lam * np.maximum(x, 0.0)), c.ks_level,
                        name="T_n-gamma-law", seed=c.seed))
    return ExperimentResult(c.experiment, reps)


def _hitting_cdf_unit(level: float = 1.0):
    def F(t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(t > 0, 2 * ndtr(-level / np.sqrt(np.where(t > 0, t, 1.0))), 0.0)
    return F


def _hitting_time(c: ExperimentConfig) -> ExperimentResult:
    tau = sample_hitting_time_unit(c.ks_samples, c.seed)
    reps = [
        ks_test(tau, _hitting_cdf_unit(), c.ks_level, name="sampler-law", seed=c.seed),
        ks_test(tau, _hitting_cdf_unit(1.2), c.ks_level, name="sampler-law-wrong-level", seed=c.seed,
                negative_control=True),
    ]
    grid = _grid(c)
    size = BLOCK
    finals, lows, barrier_events, clip_events = [], [], 0, 0
    for lo in range(0, c.n_paths, size):
        m = min(size, c.n_paths - lo)
        b = enlarged_brownian_given_tau(None, grid, m, c.seed, start=lo, workers=c.workers)
        ti = b.terminal_index()
        rows = np.arange(m)
        finals.append(b.values[rows, ti])
        nodes = np.arange(grid.n_steps + 1)[None, :] <= ti[:, None]
        lows.append(np.min(np.where(nodes, b.values, np.inf), axis=1))
        barrier_events += int(b.meta.get("barrier_events", 0))
        clip_events += int(b.meta.get("clip_events", 0))
    final = np.concatenate(finals)
    low = np.concatenate(lows)
    pin_grid = TimeGrid(np.array([0.0, 1.0]), refinement="summary")
    pb = PathBundle(pin_grid, np.zeros((len(final), 2)), aux={"final": final},
                    meta={"seed": c.seed, "grid": grid.summary(), "terminal_index": 0})
    reps.append(terminal_pinning_test(pb, -1.0, 0.05, final="final", name="conditioned-pinning"))
    n = len(low)
    dipped = float(np.mean(low <= -1.0))
    reps.append(TestReport("conditioned-dip-fraction", dipped, math.sqrt(max(dipped * (1 - dipped), 0) / n),
                           math.nan, 0.01, bool(dipped <= 0.01), n, c.seed, grid.summary(), one_sided=True,
                           estimate=dipped, target=0.01))
    return ExperimentResult(c.experiment, reps, diagnostics={"barrier_events": barrier_events,
                                                             "clip_events": clip_events})


def _ou_logpi_derivative(a: float, v, y, x):
    """Hand-differentiated ``d/dy log pi`` for the OU transition density."""
    e = np.exp(-a * v)
    var = -np.expm1(-2 * a * v) / (2 * a)
    return e * (x - y * e) / var


def _diffusion_drift(c: ExperimentConfig) -> ExperimentResult:
    a, T = c.mean_reversion, c.horizon
    grid = _grid(c)
    keep_t = _pair_times(c.pairs)
    pairs = [tuple(p) for p in c.pairs]
    pi = ou_kernel(a)
    pts = grid.points
    before = pts < T * (1 - 1e-12)

    def chunk(lo, m):
        b = simulate_ou(a, 0.0, grid, m, c.seed, start=lo, workers=c.workers)
        Y = b.values
        L = Y[:, -1].copy()
        base = -a * Y
        k = diffusion_info_drift(pi, pts[None, before], Y[:, before], L[:, None], T)
        h = np.diff(pts)
        A_F = np.zeros_like(Y)
        np.cumsum(0.5 * h * (base[:, 1:] + base[:, :-1]), axis=1, out=A_F[:, 1:])
        g = base[:, before] + k
        A_G = np.empty_like(Y)
        A_G[:, before] = 0.0
        np.cumsum(0.5 * h[: int(before.sum()) - 1] * (g[:, 1:] + g[:, :-1]), axis=1, out=A_G[:, 1:int(before.sum())])
        A_G[:, ~before] = A_G[:, [int(before.sum()) - 1]]
        return b.with_aux(L=L).with_channels(A_G=A_G, A_F=A_F).restrict(keep_t)

    b = _chunked(c.n_paths, 2 * BLOCK, chunk)
    th = c.threshold
    reps = martingale_increment_test(b, "A_G", "L", pairs, threshold=th, name="compensated")
    reps += martingale_increment_test(b, "A_F", "L", pairs, _ONE, _ID, th, name="uncompensated",
                                      negative_control=True)
    tt, yy, xx = np.meshgrid([0.0, 0.3, 0.6, 0.9], [-2.0, -0.5, 0.0, 0.7, 1.5], [-1.5, 0.0, 0.4, 2.0])
    fd = diffusion_info_drift(pi, tt, yy, xx, T)
    reps.append(_deterministic("ou-drift-vs-hand-derivative",
                               float(np.max(np.abs(fd - _ou_logpi_derivative(a, T - tt, yy, xx)))), 1e-5))
    fd_bm = diffusion_info_drift(gaussian_kernel, tt, yy, xx, T)
    reps.append(_deterministic("gaussian-kernel-vs-bridge-drift",
                               float(np.max(np.abs(fd_bm - bb_drift(tt, yy, xx, T)))), 1e-6))
    return ExperimentResult(c.experiment, reps)


# --------------------------------------------------------------------------
# progressive enlargements


def _noisy_signal(c: ExperimentConfig) -> ExperimentResult:
    sched = VarianceSchedule(c.sigma_levels, c.sigma_breaks or (), c.horizon)
    grid = _grid(c)
    times = _pair_times(c.pairs)
    b = _chunked(c.n_paths, 2 * BLOCK,
                 lambda lo, m: simulate_peof(sched, grid, m, c.seed, start=lo, workers=c.workers).restrict(times))
    th = c.threshold
    grid_pairs = [(s, t) for s in times for t in times]
    reps = covariance_test(b, lambda s, t: min(s, t), grid_pairs, th, x="W_tilde", y="W_tilde",
                           name="innovation-cov")
    upper = [(s, t) for s in times for t in times if s <= t and s < c.horizon]
    target = lambda s, t: peof_innovation_signal_cov(sched, s)
    sig = covariance_test(b, target, upper, th, x="V", y="W_tilde", centered=False, name="innovation-signal")
    reps += sig
    for r in sig:
        reps.append(_significantly_positive(r, th, r.name.replace("innovation-signal", "innovation-signal-positive")))
    reps += covariance_test(b, 0.0, upper, th, x="V", y="W_tilde", centered=False, name="innovation-signal-vs-zero",
                            negative_control=True)
    return ExperimentResult(c.experiment, reps)


def _prog_bridge(c: ExperimentConfig) -> ExperimentResult:
    sched = VarianceSchedule.bridge(c.sigma_levels, c.sigma_breaks or (), c.horizon)
    grid = _grid(c)
    checkpoints = [grid.nearest(f * c.horizon) for f in (0.2, 0.4, 0.6, 0.8)]

    def run(g, n_paths):
        return _chunked(n_paths, BLOCK, lambda lo, m: prog_bridge_simulate(
            sched, g, m, c.seed, record=checkpoints if g is grid else (), start=lo, workers=c.workers))

    b = run(grid, c.n_paths)
    th = c.threshold
    gs = b.meta["grid"]
    reps = []
    for t in checkpoints:
        d2 = (b.at(t) - b.at(t, "V")) ** 2
        reps.append(mean_test(d2, float(sched.v(t) - t), th, name=f"variance-gap[t={t:.6g}]", seed=c.seed,
                              grid_summary=gs))
    pairs = [(s, t) for i, s in enumerate(checkpoints) for t in checkpoints[i:]]
    reps += covariance_test(b, lambda s, t: min(s, t), pairs, th, name="B-cov")
    diag = [(t, t) for t in checkpoints]
    reps += covariance_test(b, lambda s, t: t, diag, th, y="V", centered=False, name="B-signal")
    reps += covariance_test(b, 0.0, diag, th, y="V", centered=False, name="B-signal-vs-zero", negative_control=True)
    pin = terminal_pinning_test(b, "V", 0.05, name="pinning")
    reps.append(pin)

    fine = _grid(c, 4 * c.n_steps)
    bf = run(fine, c.refine_paths)
    pin_f = terminal_pinning_test(bf, "V", 0.05, name="pinning-refined")
    reps.append(pin_f)
    ratio = pin_f.estimate / pin.estimate
    se = ratio * math.hypot(pin_f.stderr / pin_f.estimate, pin.stderr / pin.estimate)
    reps.append(TestReport("pinning-refinement-decreases", ratio, se, math.nan, 1.0, bool(ratio < 1.0),
                           pin_f.n_paths, c.seed, fine.summary(), one_sided=True, estimate=ratio, target=1.0))
    # with the gap v - t linear near T the mean-square pinning error is (v - t) at the last node
    gap = lambda g: float(sched.v(g.points[-2]) - g.points[-2])
    expect = math.sqrt(gap(fine) / gap(grid))
    z = (ratio - expect) / se if se > 0 else math.inf
    reps.append(TestReport("pinning-refinement-rate", ratio - expect, se, z, th, bool(abs(z) <= th), pin_f.n_paths,
                           c.seed, fine.summary(), estimate=ratio, target=expect))
    return ExperimentResult(c.experiment, reps, diagnostics={
        "clip_events": int(b.meta.get("clip_events", 0)), "clip_events_refined": int(bf.meta.get("clip_events", 0)),
        "v0": sched.v0})


def _cf_identity(c: ExperimentConfig) -> ExperimentResult:
    (s, t), = c.pairs
    reps = []
    for model in (LevyModel.brownian(), LevyModel.poisson(c.lam)):
        reps += cf_identity_test(model, c.thetas, s, t, c.horizon, n_paths=c.n_paths, seed=c.seed,
                                 threshold=c.threshold, n_steps=c.n_steps, workers=c.workers, chunk=2 * BLOCK)
    return ExperimentResult(c.experiment, reps)


# --------------------------------------------------------------------------
# applications


def _first_passage_prob(lb: float, mu: float, sigma: float, T: float) -> float:
    """``P(min_{t <= T} (mu t + sigma W_t) <= lb)`` for ``lb < 0``."""
    s = sigma * math.sqrt(T)
    return float(ndtr((lb - mu * T) / s) + math.exp(2 * mu * lb / sigma**2) * ndtr((lb + mu * T) / s))


_BGK = 0.5826  # -zeta(1/2)/sqrt(2 pi), discrete-monitoring barrier shift


def _structural_default(c: ExperimentConfig) -> ExperimentResult:
    model = StructuralModel(mu=c.mu, sigma=c.vol, V0=c.V0, K=c.K, T=c.horizon)
    grid = _grid(c)
    strides = (16, 4, 1)
    taus = {k: [] for k in strides}
    for lo in range(0, c.n_paths, BLOCK):
        m = min(BLOCK, c.n_paths - lo)
        out = default_times_by_monitoring(model, grid, m, c.seed, strides, start=lo, workers=c.workers)
        for k in strides:
            taus[k].append(out[k])
    taus = {k: np.concatenate(v) for k, v in taus.items()}
    lb, T = model.log_barrier, c.horizon
    p_cont = _first_passage_prob(lb, c.mu, c.vol, T)
    reps, probs = [], []
    n = c.n_paths
    for k in strides:
        steps = grid.n_steps // k
        h = T / steps
        p = float(np.mean(taus[k] <= T))
        probs.append(p)
        se = math.sqrt(p * (1 - p) / n)
        bias = p_cont - _first_passage_prob(lb - _BGK * c.vol * math.sqrt(h), c.mu, c.vol, T)
        band = c.threshold * se + bias
        err = abs(p - p_cont)
        reps.append(TestReport(f"default-prob[steps={steps}]", err, se, _z(p - p_cont, se), band, bool(err <= band),
                               n, c.seed, f"uniform n={steps} T={T:g}", one_sided=True, estimate=p, target=p_cont))
    # same paths, finer monitoring sees a superset of nodes: the bias can only shrink
    worst = max(b - a for a, b in zip(probs[1:], probs[:-1]))
    reps.append(TestReport("bias-shrinks-under-refinement", worst, 0.0, math.nan, 0.0, bool(worst <= 0.0), n, c.seed,
                           grid.summary(), one_sided=True, estimate=worst, target=0.0))
    curve = default_prob_curve(taus[1], make_grid(T, 256))
    return ExperimentResult(c.experiment, reps, tables={"default_curve": curve},
                            diagnostics={"continuous_default_prob": p_cont,
                                         "default_prob": dict(zip((str(grid.n_steps // k) for k in strides), probs))})


def _z(stat, se):
    return stat / se if se > 0 else (0.0 if stat == 0 else math.copysign(math.inf, stat))


def _kyle_run(kc: KyleBackConfig, n_paths: int, keep, workers: int, free_after_horizon=False):
    bundles, hits, diag = [], [], None
    for lo in range(0, n_paths, BLOCK):
        m = min(BLOCK, n_paths - lo)
        r = kyle_back_simulate(kc, free_after_horizon=free_after_horizon, keep_times=keep, start=lo, n_paths=m,
                               workers=workers)
        bundles.append(r.bundle)
        hits.append(r.hit_times)
        if diag is None:
            diag = dict(r.diagnostics)
            diag["defaulted"] = 0
        else:
            for key in ("clip_events", "barrier_events", "early_hits"):
                diag[key] += r.diagnostics[key]
        diag["defaulted"] += int(np.sum(r.tau <= 1.0))
    diag["defaulted_fraction"] = diag.pop("defaulted") / n_paths
    return PathBundle.concat(bundles), np.concatenate(hits), diag


def _kyle_back(c: ExperimentConfig) -> ExperimentResult:
    times = [0.25, 0.5, 0.75, 1.0]
    kc = KyleBackConfig(n_steps=c.n_steps, n_paths=c.n_paths, seed=c.seed, drift_variant=c.drift_variant,
                        refinement=c.refinement, beta=geometric_beta(c.n_steps, c.end_ratio)
                        if c.refinement == "geometric" else None)
    th = c.threshold
    F = _hitting_cdf_unit()

    def checks(b, hits, tag, control):
        pairs = [(s, t) for i, s in enumerate(times) for t in times[i:]]
        out = covariance_test(b, lambda s, t: min(s, t), pairs, th, name=f"{tag}cov", negative_control=False)
        out.append(ks_test(hits, F, c.ks_level, upper=1.0, name=f"{tag}hit-law", seed=c.seed,
                           grid_summary=b.meta["grid"], negative_control=control))
        out.append(terminal_pinning_test(b, -1.0, 0.05, final="R_pre", mask=b.aux["tau"] <= 1.0,
                                         name=f"{tag}pinning"))
        out[-1].negative_control = control
        return out

    b, hits, diag = _kyle_run(kc, c.n_paths, times, c.workers)
    reps = checks(b, hits, "", False)
    diagnostics = {"main": diag}
    if c.drift_variant == "g4_consistent":
        small = replace(kc, n_paths=c.control_paths)
        bf, hf, df = _kyle_run(small, c.control_paths, times, c.workers, free_after_horizon=True)
        reps.append(ks_test(hf, F, c.ks_level, upper=1.0, name="free-after-horizon/hit-law", seed=c.seed,
                            grid_summary=bf.meta["grid"], negative_control=True))
        bp, hp, dp = _kyle_run(replace(small, drift_variant="as_printed"), c.control_paths, times, c.workers)
        reps.append(ks_test(hp, F, c.ks_level, upper=1.0, name="as-printed/hit-law", seed=c.seed,
                            grid_summary=bp.meta["grid"], negative_control=True))
        p = terminal_pinning_test(bp, -1.0, 0.05, final="R_pre", mask=bp.aux["tau"] <= 1.0,
                                  name="as-printed/pinning")
        p.negative_control = True
        reps.append(p)
        diagnostics.update({"free_after_horizon": df, "as_printed": dp})
    return ExperimentResult(c.experiment, reps, diagnostics=diagnostics)


RUNNERS: dict[str, Callable[[ExperimentConfig], ExperimentResult]] = {
    "bridge-brownian": _bridge_brownian,
    "bridge-poisson": _bridge_poisson,
    "nth-jump": _nth_jump,
    "hitting-time": _hitting_time,
    "diffusion-drift": _diffusion_drift,
    "noisy-signal": _noisy_signal,
    "prog-bridge": _prog_bridge,
    "cf-identity": _cf_identity,
    "structural-default": _structural_default,
    "kyle-back": _kyle_back,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run one named experiment (after :func:`resolve_config`).  Report names get the experiment as prefix."""
    c = resolve_config(cfg)
    if c.experiment == "suite":
        raise InvalidArgument("use run_suite for the full battery")
    res = RUNNERS[c.experiment](c)
    _named(res.reports, c.experiment)
    return res


def run_suite(cfg: ExperimentConfig, progress: Callable[[str], None] | None = None) -> list[ExperimentResult]:
    """Every experiment with its pinned defaults, sharing seed, thresholds and worker count."""
    resolve_config(cfg)
    out = []
    for name in EXPERIMENTS:
        sub = ExperimentConfig(experiment=name, seed=cfg.seed, threshold=cfg.threshold, ks_level=cfg.ks_level,
                               workers=cfg.workers)
        if progress:
            progress(name)
        out.append(run_experiment(sub))
    return out
