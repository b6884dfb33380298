"""Command-line front end: ``filtlab run --experiment NAME [--config FILE] [flags]``.

Exit status is 0 when every check behaves as expected (negative controls
fail, everything else passes), 1 on a statistical failure and 2 on a usage
or validation error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys
import time
from pathlib import Path
from typing import Sequence

from . import __version__
from .errors import InvalidArgument, NumericFailure
from .experiments import EXPERIMENTS, ConfigError, ExperimentConfig, resolve_config, run_experiment, run_suite
from .verify import reports_to_json, write_reports_csv

OUTPUT_ENV = "FILTLAB_OUTPUT_DIR"
DEFAULT_OUTPUT = "filtlab-out"

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _pairs(text: str) -> list[list[float]]:
    out = []
    for item in text.split(","):
        parts = item.split(":")
        if len(parts) != 2:
            raise argparse.ArgumentTypeError(f"expected s:t pairs separated by commas, got {item!r}")
        try:
            out.append([float(parts[0]), float(parts[1])])
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad pair {item!r}") from None
    return out


# flag -> (config field, type, help)
_FLAGS = {
    "--seed": ("seed", int, "root seed"),
    "--n-paths": ("n_paths", int, "number of simulated paths"),
    "--n-steps": ("n_steps", int, "number of time steps"),
    "--refinement": ("refinement", str, "grid spacing: uniform or geometric"),
    "--end-ratio": ("end_ratio", float, "last step over first step on geometric grids"),
    "--horizon": ("horizon", float, "time horizon T"),
    "--lam": ("lam", float, "Poisson rate"),
    "--n": ("n", int, "index of the revealed jump"),
    "--mean-reversion": ("mean_reversion", float, "OU mean-reversion speed"),
    "--sigma-levels": ("sigma_levels", _floats, "volatility levels, comma-separated"),
    "--sigma-breaks": ("sigma_breaks", _floats, "volatility break times, comma-separated"),
    "--mu": ("mu", float, "log firm-value drift"),
    "--vol": ("vol", float, "log firm-value volatility"),
    "--K": ("K", float, "default barrier"),
    "--V0": ("V0", float, "initial firm value"),
    "--thetas": ("thetas", _floats, "characteristic-function arguments, comma-separated"),
    "--drift-variant": ("drift_variant", str, "Kyle-Back drift: g4_consistent or as_printed"),
    "--pairs": ("pairs", _pairs, "test times as s:t,s:t,..."),
    "--ks-samples": ("ks_samples", int, "sample size for the hitting-time KS check"),
    "--refine-paths": ("refine_paths", int, "paths for the refined-grid pinning run"),
    "--control-paths": ("control_paths", int, "paths for Kyle-Back negative controls"),
    "--threshold": ("threshold", float, "|z| acceptance threshold"),
    "--ks-level": ("ks_level", float, "KS significance level"),
    "--workers": ("workers", int, "worker threads for path simulation"),
    "--output-dir": ("output_dir", str, f"where reports go (default ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 already; keep the message on stderr
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="filtlab", description="Monte Carlo checks of enlargement-of-filtration decompositions.")
    p.add_argument("--version", action="version", version=f"filtlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    run = sub.add_parser("run", help="run an experiment and write its reports")
    run.add_argument("--experiment", choices=(*EXPERIMENTS, "suite"), help="experiment name")
    run.add_argument("--config", help="JSON file of configuration keys; flags override it")
    for flag, (dest, typ, hlp) in _FLAGS.items():
        run.add_argument(flag, dest=dest, type=typ, default=None, help=hlp)
    run.add_argument("--quiet", action="store_true", help="print only the summary line")
    sub.add_parser("list", help="list experiments")
    return p


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    data: dict = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError("config", f"cannot read {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"{args.config} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config", "the config file must hold a JSON object")
    for dest, *_ in _FLAGS.values():
        v = getattr(args, dest)
        if v is not None:
            data[dest] = v
    if args.experiment is not None:
        data["experiment"] = args.experiment
    if "experiment" not in data:
        raise ConfigError("experiment", "required (flag --experiment or config key)")
    return ExperimentConfig.from_dict(data)


def _output_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.output_dir or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)


def run(args: argparse.Namespace) -> int:
    try:
        cfg = _load_config(args)
        resolved = resolve_config(cfg)
    except (ConfigError, TypeError) as exc:
        print(f"filtlab: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = _output_dir(resolved)
    say = (lambda s: None) if args.quiet else (lambda s: print(s, flush=True))
    t0 = time.perf_counter()
    try:
        if resolved.experiment == "suite":
            results = run_suite(resolved, progress=lambda name: say(f"== {name}"))
        else:
            results = [run_experiment(resolved)]
    except NumericFailure as exc:
        print(f"filtlab: numeric failure: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except InvalidArgument as exc:
        print(f"filtlab: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    wall = time.perf_counter() - t0

    reports = [r for res in results for r in res.reports]
    for r in reports:
        say(r.line())
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "version": __version__,
        "config": resolved.to_dict(),
        "reports": reports_to_json(reports),
        "diagnostics": {res.experiment: res.diagnostics for res in results if res.diagnostics},
        "wallclock_seconds": wall,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    with open(out / "report.json", "w") as fh:
        json.dump(payload, fh, indent=2, allow_nan=False)
        fh.write("\n")
    with open(out / "config.json", "w") as fh:
        json.dump(resolved.to_dict(), fh, indent=2, allow_nan=False)
        fh.write("\n")
    write_reports_csv(reports, out / "reports.csv")
    for res in results:
        for name, curve in res.tables.items():
            curve.to_csv(out / f"{res.experiment}_{name}.csv")
    bad = [r for r in reports if not r.as_expected]
    print(f"filtlab: {len(reports) - len(bad)}/{len(reports)} checks as expected; "
          f"report written to {out / 'report.json'}", flush=True)
    return EXIT_OK if not bad else EXIT_FAIL


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list":
        for name in (*EXPERIMENTS, "suite"):
            print(name)
        return EXIT_OK
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
