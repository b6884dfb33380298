"""Monte Carlo certification: martingale increments, covariances, terminal
pinning, characteristic-function identities and Kolmogorov-Smirnov fits.

Every check returns :class:`TestReport` objects.  Equality checks pass when
``|z| <= threshold``; one-sided checks (pinning, KS) pass when the statistic
is at most the threshold.  A report flagged ``negative_control`` is expected
to fail.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import kstwobign

from .errors import InvalidArgument
from .paths import LevyModel, PathBundle, TimeGrid, make_grid
from .rng import BLOCK

__all__ = [
    "TestReport",
    "EnlargedModel",
    "mean_test",
    "martingale_increment_test",
    "covariance_test",
    "terminal_pinning_test",
    "cf_identity_test",
    "ks_test",
    "default_Z_family",
    "default_g_family",
    "reports_to_json",
    "write_reports_json",
    "write_reports_csv",
    "verdict",
]

CSV_COLUMNS = ("name", "statistic", "stderr", "z", "threshold", "pass")


@dataclass
class TestReport:
    """Outcome of one statistical check.

    ``statistic`` is estimate minus target for equality checks, so that
    ``z = statistic / stderr``.
    """

    __test__ = False  # keep pytest from collecting this class

    name: str
    statistic: float
    stderr: float
    z: float
    threshold: float
    passed: bool
    n_paths: int
    seed: int | None = None
    grid_summary: str = ""
    one_sided: bool = False
    negative_control: bool = False
    estimate: float | None = None
    target: float | None = None

    @property
    def as_expected(self) -> bool:
        """Passes, or fails when it is a negative control."""
        return self.passed != self.negative_control

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        for k, v in d.items():
            if isinstance(v, float) and not math.isfinite(v):
                d[k] = None
        return d

    def line(self) -> str:
        tag = "ok  " if self.as_expected else "FAIL"
        kind = " (negative control)" if self.negative_control else ""
        if self.one_sided:
            body = f"stat={self.statistic:.4g} <= {self.threshold:.4g}"
        else:
            body = f"stat={self.statistic:+.4g} se={self.stderr:.3g} z={self.z:+.2f}"
        return f"{tag} {self.name}: {body} pass={self.passed}{kind}"


def _z(stat: float, se: float) -> float:
    if se > 0:
        return stat / se
    if stat == 0:
        return 0.0
    return math.copysign(math.inf, stat) if not math.isnan(stat) else math.nan


def mean_test(samples: np.ndarray, target: float = 0.0, threshold: float = 4.0, *, name: str,
              seed: int | None = None, grid_summary: str = "", negative_control: bool = False) -> TestReport:
    """Two-sided CLT test of ``E[samples] = target``."""
    x = np.asarray(samples, dtype=float)
    n = len(x)
    if n < 2:
        raise InvalidArgument("a mean test needs at least two samples")
    est = float(np.mean(x))
    se = float(np.std(x, ddof=1) / math.sqrt(n))
    stat = est - target
    z = _z(stat, se)
    return TestReport(name, stat, se, z, threshold, bool(abs(z) <= threshold), n, seed, grid_summary,
                      negative_control=negative_control, estimate=est, target=float(target))


# --------------------------------------------------------------------------
# martingale increments


def _median_indicator(x: np.ndarray) -> np.ndarray:
    return (x > np.median(x)).astype(float)


def default_Z_family() -> dict[str, Callable[[np.ndarray], np.ndarray]]:
    """Bounded functionals of the state at ``s``."""
    return {"1": np.ones_like, "sin": np.sin, "above_median": _median_indicator}


def default_g_family() -> dict[str, Callable[[np.ndarray], np.ndarray]]:
    """Bounded functions of the revealed variable."""
    return {"1": np.ones_like, "cos": np.cos, "above_median": _median_indicator}


@dataclass(frozen=True)
class EnlargedModel:
    """A Doob-Meyer decomposition under test: ``process - compensator`` should be
    a martingale in the filtration enlarged with ``aux[L]``."""

    name: str
    compensator: Callable[[PathBundle], np.ndarray] | None
    L: str | None
    process: str | None = None

    def residual(self, bundle: PathBundle) -> np.ndarray:
        M = bundle.process(self.process)
        return M if self.compensator is None else M - self.compensator(bundle)

    def test(self, bundle: PathBundle, pairs, **kw) -> list[TestReport]:
        return martingale_increment_test(bundle, self.compensator, self.L, pairs, process=self.process,
                                         name=kw.pop("name", self.name), **kw)


def _pair_indices(grid: TimeGrid, pairs) -> list[tuple[float, float, int, int]]:
    out = []
    for s, t in pairs:
        if not s < t:
            raise InvalidArgument(f"need s < t, got ({s}, {t})")
        out.append((s, t, grid.index_of(s), grid.index_of(t)))
    return out


def martingale_increment_test(
    bundle: PathBundle,
    compensator: None | str | np.ndarray | Callable[[PathBundle], np.ndarray] = None,
    L: str | None = None,
    pairs: Sequence[tuple[float, float]] = ((0.25, 0.5), (0.25, 0.75), (0.5, 0.75)),
    Z_family: Mapping[str, Callable] | None = None,
    g_family: Mapping[str, Callable] | None = None,
    threshold: float = 4.0,
    *,
    name: str = "martingale",
    process: str | None = None,
    z_source: str | None = None,
    negative_control: bool = False,
) -> list[TestReport]:
    """Estimate ``E[Z g(L) (X_t - X_s)]`` with ``X = M - A`` for every ``(s, t, Z, g)``.

    ``M`` is the bundle's values (or channel ``process``) and ``A`` the
    compensator: ``None`` (zero), a channel name, an array, or a callable on
    the bundle.  ``Z`` receives the state at ``s`` (values, or channel
    ``z_source``) and ``g`` the per-path ``aux[L]``.  Without ``L`` only
    ``g = 1`` is used.
    """
    M = bundle.process(process)
    if compensator is None:
        X = M
    else:
        A = bundle.process(compensator) if isinstance(compensator, str) else (
            compensator(bundle) if callable(compensator) else np.asarray(compensator))
        if A.shape != M.shape:
            raise InvalidArgument("compensator shape does not match the paths")
        X = M - A
    Zf = default_Z_family() if Z_family is None else Z_family
    if L is None:
        gvals = {"1": np.ones(bundle.n_paths)}
    else:
        if L not in bundle.aux:
            raise InvalidArgument(f"bundle has no aux {L!r}")
        gf = default_g_family() if g_family is None else g_family
        gvals = {k: np.asarray(f(bundle.aux[L]), dtype=float) for k, f in gf.items()}
    state = bundle.process(z_source)
    reports = []
    for s, t, i, j in _pair_indices(bundle.grid, pairs):
        dX = X[:, j] - X[:, i]
        for zn, zf in Zf.items():
            zv = np.asarray(zf(state[:, i]), dtype=float)
            for gn, gv in gvals.items():
                reports.append(mean_test(
                    zv * gv * dX, 0.0, threshold,
                    name=f"{name}[s={s:g},t={t:g},Z={zn},g={gn}]",
                    seed=bundle.meta.get("seed"), grid_summary=bundle.meta.get("grid", bundle.grid.summary()),
                    negative_control=negative_control,
                ))
    return reports


# --------------------------------------------------------------------------
# covariances and pinning


def covariance_test(
    bundle: PathBundle,
    target: Callable[[float, float], float] | float,
    pairs: Sequence[tuple[float, float]],
    threshold: float = 4.0,
    *,
    x: str | None = None,
    y: str | None = None,
    centered: bool = True,
    name: str = "cov",
    negative_control: bool = False,
) -> list[TestReport]:
    """Compare ``Cov(X_s, Y_t)`` with ``target(s, t)`` at each pair.

    ``X`` and ``Y`` default to the bundle's values.  With ``centered=False``
    the raw moment ``E[X_s Y_t]`` is tested instead.  A constant ``target``
    applies to every pair.
    """
    if not callable(target):
        const = float(target)
        target = lambda s, t: const
    X, Y = bundle.process(x), bundle.process(y)
    out = []
    for s, t in pairs:
        a, b = X[:, bundle.grid.index_of(s)], Y[:, bundle.grid.index_of(t)]
        if centered:
            a, b = a - a.mean(), b - b.mean()
        out.append(mean_test(a * b, float(target(s, t)), threshold, name=f"{name}[s={s:g},t={t:g}]",
                             seed=bundle.meta.get("seed"), grid_summary=bundle.meta.get("grid", bundle.grid.summary()),
                             negative_control=negative_control))
    return out


def terminal_pinning_test(
    bundle: PathBundle,
    target: str | float,
    rms_bound: float,
    *,
    mask: np.ndarray | None = None,
    process: str | None = None,
    final: str | None = None,
    name: str = "pinning",
) -> TestReport:
    """One-sided check that the RMS distance between each path's last
    pre-singular value and ``target`` is at most ``rms_bound``.

    ``target`` is an aux name, a channel name (read at the same node) or a
    constant.  ``final`` names an aux holding precomputed terminal values,
    for bundles already restricted to a few times.
    """
    rows = np.arange(bundle.n_paths)
    ti = bundle.terminal_index()
    if final is not None:
        if final not in bundle.aux:
            raise InvalidArgument(f"bundle has no aux {final!r}")
        final_v = bundle.aux[final]
    else:
        final_v = bundle.process(process)[rows, ti]
    if isinstance(target, str):
        if target in bundle.aux:
            tv = bundle.aux[target]
        elif target in bundle.channels:
            tv = bundle.channels[target][rows, ti]
        else:
            raise InvalidArgument(f"bundle has no aux or channel {target!r}")
    else:
        tv = np.full(bundle.n_paths, float(target))
    d2 = (final_v - tv) ** 2
    if mask is not None:
        d2 = d2[np.asarray(mask, dtype=bool)]
    n = len(d2)
    if n == 0:
        raise InvalidArgument("no paths selected for the pinning test")
    rms = float(math.sqrt(np.mean(d2)))
    se_ms = float(np.std(d2, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    se = se_ms / (2 * rms) if rms > 0 else 0.0
    return TestReport(name, rms, se, _z(rms, se), float(rms_bound), bool(rms <= rms_bound), n,
                      bundle.meta.get("seed"), bundle.meta.get("grid", bundle.grid.summary()),
                      one_sided=True, estimate=rms, target=float(rms_bound))


# --------------------------------------------------------------------------
# characteristic-function identity


def _cf_h_family() -> dict[str, Callable[[np.ndarray], np.ndarray]]:
    return {"1": np.ones_like, "cos": np.cos}


def _cf_parts(model: LevyModel, s: float, t: float, T: float, n: int, seed: int, start: int, n_steps: int,
              workers: int):
    """``Z_s, Z_t, Z_T`` and ``int_s^t (Z_T - Z_u)/(T - u) du`` for a chunk of paths."""
    phi = lambda u: -np.log(T - u)
    if model.has_jumps:
        grid = TimeGrid(np.array([0.0, s, t, T]))
        b = model.simulate(grid, n, seed, start=start, workers=workers)
        Zs, Zt, ZT = b.values[:, 1], b.values[:, 2], b.values[:, 3]
        jt = b.jump_times
        marks = np.ones_like(jt.flat) if jt.marks is None else jt.marks
        inside = (jt.flat > s) & (jt.flat <= t)
        w = np.where(inside, marks * (phi(t) - phi(np.where(inside, jt.flat, s))), 0.0)
        inner = np.bincount(jt.path_ids(), weights=w, minlength=n)
        integral = (ZT - Zs) * (phi(t) - phi(s)) - inner
        return Zs, Zt, ZT, integral
    grid = make_grid(T, n_steps)
    i, j = grid.index_of(s), grid.index_of(t)
    b = model.simulate(grid, n, seed, start=start, workers=workers)
    Z = b.values
    u = grid.points[i:j + 1]
    f = (Z[:, -1:] - Z[:, i:j + 1]) / (T - u)
    integral = np.sum(0.5 * np.diff(u) * (f[:, 1:] + f[:, :-1]), axis=1)
    return Z[:, i], Z[:, j], Z[:, -1], integral


def cf_identity_test(
    model: LevyModel,
    thetas: Sequence[float],
    s: float,
    t: float,
    T: float,
    h_family: Mapping[str, Callable] | None = None,
    n_paths: int = 200_000,
    seed: int = 7,
    threshold: float = 4.0,
    *,
    n_steps: int = 512,
    workers: int = 1,
    chunk: int = 8 * BLOCK,
    name: str = "cf",
    controls: bool = True,
) -> list[TestReport]:
    """Check ``E[e^{i theta Z_T} h(Z_s) int_s^t (Z_T - Z_u)/(T - u) du] = E[e^{i theta Z_T} h(Z_s) (Z_t - Z_s)]``.

    Real and imaginary parts of the per-path difference are tested
    separately.  A second route compares the increment side with the closed
    form ``(t - s) psi'(theta)/i E[e^{i theta Z_T} h(Z_s)]``.  For jump models
    the time integral is exact given the jump epochs; for Brownian models it
    uses the trapezoid rule on ``n_steps`` uniform steps.  With ``controls``
    an uncompensated negative control (increment side against 0) is added.
    """
    if not 0 <= s < t < T:
        raise InvalidArgument("need 0 <= s < t < T")
    hf = _cf_h_family() if h_family is None else h_family
    cols: dict[tuple, list[np.ndarray]] = {}
    for lo in range(0, n_paths, chunk):
        m = min(chunk, n_paths - lo)
        Zs, Zt, ZT, integral = _cf_parts(model, s, t, T, m, seed, lo, n_steps, workers)
        for th in thetas:
            e = np.exp(1j * th * ZT)
            dpsi = complex(model.exponent_derivative(th))
            for hn, h in hf.items():
                w = e * np.asarray(h(Zs), dtype=float)
                inc = w * (Zt - Zs)
                cols.setdefault(("id", th, hn), []).append(w * integral - inc)
                cols.setdefault(("psi", th, hn), []).append(inc - w * (t - s) * dpsi / 1j)
                cols.setdefault(("raw", th, hn), []).append(inc)
    grid_summary = f"{model.kind} s={s:g} t={t:g} T={T:g}" + ("" if model.has_jumps else f" n={n_steps}")
    reports = []
    for th in thetas:
        for hn in hf:
            for kind in ("id", "psi"):
                d = np.concatenate(cols[(kind, th, hn)])
                for part, arr in (("re", d.real), ("im", d.imag)):
                    tag = "" if kind == "id" else ".psi"
                    reports.append(mean_test(arr, 0.0, threshold, seed=seed, grid_summary=grid_summary,
                                             name=f"{name}[{model.kind},theta={th:g},h={hn}]{tag}.{part}"))
            if controls:
                d = np.concatenate(cols[("raw", th, hn)])
                re = mean_test(d.real, 0.0, threshold, name="", seed=seed)
                im = mean_test(d.imag, 0.0, threshold, name="", seed=seed)
                worst = re if abs(re.z) >= abs(im.z) else im
                part = "re" if worst is re else "im"
                worst.name = f"{name}[{model.kind},theta={th:g},h={hn}].uncompensated.{part}"
                worst.grid_summary = grid_summary
                worst.negative_control = True
                reports.append(worst)
    return reports


# --------------------------------------------------------------------------
# Kolmogorov-Smirnov


def ks_test(samples, cdf: Callable[[np.ndarray], np.ndarray], level: float = 0.01, *, upper: float | None = None,
            name: str = "ks", seed: int | None = None, grid_summary: str = "",
            negative_control: bool = False) -> TestReport:
    """Kolmogorov-Smirnov distance to ``cdf`` against the asymptotic critical value.

    With ``upper`` the comparison is restricted to ``(-inf, upper]``; samples
    beyond it count only through the empirical CDF level (right censoring).
    The critical value ``K_{1-level}/sqrt(n)`` stays valid (conservative)
    under censoring.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    if n == 0:
        raise InvalidArgument("KS test needs samples")
    if not 0 < level < 1:
        raise InvalidArgument("level must lie in (0, 1)")
    if upper is not None:
        x = x[x <= upper]
    k = len(x)
    F = np.asarray(cdf(x), dtype=float) if k else np.empty(0)
    d = 0.0
    if k:
        i = np.arange(1, k + 1)
        d = max(float(np.max(i / n - F)), float(np.max(F - (i - 1) / n)))
    if upper is not None:
        d = max(d, abs(k / n - float(cdf(np.array([upper]))[0])))
    crit = float(kstwobign.isf(level) / math.sqrt(n))
    se = 1.0 / math.sqrt(n)
    return TestReport(name, d, se, d / se, crit, bool(d <= crit), n, seed, grid_summary,
                      one_sided=True, negative_control=negative_control, estimate=d, target=crit)


# --------------------------------------------------------------------------
# serialisation


def reports_to_json(reports: Iterable[TestReport]) -> list[dict]:
    return [r.to_dict() for r in reports]


def write_reports_json(reports: Iterable[TestReport], path, **extra) -> None:
    payload = {**extra, "reports": reports_to_json(reports)}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=False)
        fh.write("\n")


def write_reports_csv(reports: Iterable[TestReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in reports:
            d = r.to_dict()
            w.writerow([d[c] for c in CSV_COLUMNS])


def verdict(reports: Iterable[TestReport]) -> bool:
    """True when every check passes and every negative control fails."""
    return all(r.as_expected for r in reports)
