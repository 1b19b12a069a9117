"""Command-line front end.

Subcommands: ``estimate``, ``test``, ``study``, ``curves``, ``coeffs`` and
``simulate``. Exit codes: 0 on success, 1 for usage or configuration errors,
2 when the level set is empty for every field.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .chaoscoeff import build_table, write_table_csv
from .covariance import IsotropicCovariance
from .estimator import ESTIMATE_COLUMNS, EstimateCase, EstimateResult, confidence_region, estimate_row
from .fieldsim import AffineModel, read_grid, replicate_seed, sample_field, write_grid, write_grid_csv
from .isotest import TEST_COLUMNS, TestResult, result_row
from .levelcurve import extract_level_curve, write_curve_csv
from .study import (ConfigError, StudyConfig, analyse_field, fmt, load_config, run_replicates,
                    run_study, write_csv)
from .varstack import DegenerateVariance, build_stack, write_stack_csv

EXIT_OK, EXIT_USAGE, EXIT_EMPTY = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad usage; this CLI reserves 2 for empty level sets."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(p: argparse.ArgumentParser, need_config: bool = True) -> None:
    p.add_argument("--config", required=need_config, help="TOML experiment config")
    p.add_argument("--seed", type=int, help="override the config's base seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads for replicates")
    p.add_argument("--out", help="output directory (overrides the config)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="artifact", description="Anisotropy estimation from level curves of Gaussian fields.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({kernels.BACKEND})")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("estimate", help="estimate (lambda, theta_o) on simulated or imported fields")
    _common(p, need_config=False)
    p.add_argument("--field", help="GRF2 grid file to analyse instead of simulating")
    p.add_argument("--u", type=float, help="level (defaults to the config level, else 0)")
    p.add_argument("--vstar", help="reference unit vector as 'x,y' (default 1,0)")
    p.add_argument("--ci", action="store_true", help="attach confidence regions")

    p = sub.add_parser("test", help="isotropy test on simulated fields")
    _common(p)

    p = sub.add_parser("study", help="Monte Carlo study with summary CSV and SVG plots")
    _common(p)

    p = sub.add_parser("curves", help="dump the level curve of one simulated or imported field")
    _common(p, need_config=False)
    p.add_argument("--field", help="GRF2 grid file")
    p.add_argument("--u", type=float)

    p = sub.add_parser("coeffs", help="dump the chaos coefficient table and covariance stack")
    _common(p)

    p = sub.add_parser("simulate", help="write simulated fields as GRF2 files")
    _common(p)
    p.add_argument("--csv", action="store_true", help="also write CSV copies")
    return parser


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _config(args) -> StudyConfig | None:
    if not args.config:
        return None
    cfg = load_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise UsageError("--seed must be nonnegative")
        cfg = cfg.with_seed(args.seed)
    if args.out:
        cfg = replace(cfg, out=args.out)
    return cfg


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or (cfg.out if cfg else "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_vstar(text: str | None, cfg) -> tuple:
    if text is None:
        return cfg.model.vstar if cfg else (1.0, 0.0)
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise UsageError("--vstar must look like 'x,y'") from None
    if abs(math.hypot(x, y) - 1.0) > 1e-9:
        raise UsageError("--vstar must be a unit vector")
    return (x, y)


def _file_config(args, cfg) -> StudyConfig:
    """The config with ``--u`` and ``--vstar`` applied, or defaults for a bare imported field."""
    vstar = _parse_vstar(getattr(args, "vstar", None), cfg)
    if cfg is not None:
        model = cfg.model if tuple(vstar) == cfg.model.vstar else replace(cfg.model, vstar=tuple(vstar))
        return replace(cfg, model=model, u=args.u if args.u is not None else cfg.u)
    u = args.u if args.u is not None else 0.0
    return StudyConfig(IsotropicCovariance(), AffineModel(1.0, 1.0, 0.0, vstar), (1,), 0.25, u, 8, 1, 0,
                       0.05, ".")


def _estimate_result_rows(cfg, reps, with_ci: bool):
    rows = []
    for rep in reps:
        if rep.status != "ok":
            rows.append([fmt(rep.n), fmt(cfg.u), fmt(rep.x_n), fmt(rep.y_n), "", "",
                         "NoCrossing" if rep.status == "no_crossing" else "Inadmissible", "", "", "", ""])
            continue
        est = EstimateResult(rep.lambda_hat, rep.theta_hat, EstimateCase(rep.case), rep.x_n, rep.y_n,
                             float(rep.n), cfg.u, rep.j_one)
        if with_ci and est.case is EstimateCase.INTERIOR:
            fitted = AffineModel.from_theta(rep.lambda1_hat, est.lambda_hat, est.theta_hat, cfg.model.vstar)
            try:
                est = confidence_region(est, build_stack(cfg.u, cfg.cov, fitted, cfg.Q), rep.n, cfg.alpha)
            except (DegenerateVariance, ValueError):
                pass
        rows.append(estimate_row(est))
    return rows


def _all_empty(reps) -> bool:
    return all(r.status == "no_crossing" for r in reps)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_estimate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    if args.field:
        grid = read_grid(args.field)
        fcfg = _file_config(args, cfg)
        reps = [analyse_field(fcfg, grid, int(round(grid.half_width)), 0, grid.seed)]
    elif cfg is not None:
        fcfg = _file_config(args, cfg)
        reps = run_replicates(fcfg, args.threads)
    else:
        raise UsageError("estimate needs --config or --field")
    write_csv(out / "estimates.csv", ESTIMATE_COLUMNS, _estimate_result_rows(fcfg, reps, args.ci))
    return EXIT_EMPTY if _all_empty(reps) else EXIT_OK


def cmd_test(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    reps = run_replicates(cfg, args.threads)
    rows = []
    for rep in reps:
        if rep.status != "ok":
            rows.append([fmt(rep.n), fmt(cfg.u), "", "", "", "", fmt(cfg.alpha)])
            continue
        res = TestResult(np.zeros(2), np.zeros(2), rep.xi, rep.p_value, cfg.alpha, bool(rep.reject),
                         rep.tau_hat, float(rep.n), cfg.u)
        rows.append(result_row(res))
    write_csv(out / "test.csv", TEST_COLUMNS, rows)
    summary = []
    for n in cfg.n_list:
        ok = [r for r in reps if r.n == n and r.status == "ok"]
        summary.append({"n": n, "u": cfg.u, "alpha": cfg.alpha, "replicates": cfg.replicates,
                        "valid": len(ok), "rejection_rate": np.mean([r.reject for r in ok]) if ok else math.nan,
                        "mean_xi": np.mean([r.xi for r in ok]) if ok else math.nan})
    write_csv(out / "test_summary.csv", ("n", "u", "alpha", "replicates", "valid", "rejection_rate", "mean_xi"),
              summary)
    return EXIT_EMPTY if _all_empty(reps) else EXIT_OK


def cmd_study(args) -> int:
    cfg = _config(args)
    result = run_study(cfg, args.threads)
    return EXIT_EMPTY if _all_empty(result["replicates"]) else EXIT_OK


def cmd_curves(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    if args.field:
        grid = read_grid(args.field)
    elif cfg is not None:
        grid = sample_field(cfg.cov, cfg.model, cfg.n_list[0], cfg.h, replicate_seed(cfg.seed, 0))
    else:
        raise UsageError("curves needs --config or --field")
    u = args.u if args.u is not None else (cfg.u if cfg else 0.0)
    curve = extract_level_curve(grid, u)
    write_curve_csv(out / "curve.csv", curve)
    return EXIT_EMPTY if curve.empty else EXIT_OK


def cmd_coeffs(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    write_table_csv(out / "coeffs.csv", build_table(cfg.model, cfg.cov, cfg.u, cfg.Q))
    write_stack_csv(out / "stack.csv", build_stack(cfg.u, cfg.cov, cfg.model, cfg.Q))
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    for n in cfg.n_list:
        for r in range(cfg.replicates):
            grid = sample_field(cfg.cov, cfg.model, n, cfg.h, replicate_seed(cfg.seed, r), with_gradient=False)
            write_grid(out / f"field_n{n}_r{r:04d}.grf", grid)
            if args.csv:
                write_grid_csv(out / f"field_n{n}_r{r:04d}.csv", grid)
    return EXIT_OK


COMMANDS = {"estimate": cmd_estimate, "test": cmd_test, "study": cmd_study, "curves": cmd_curves,
            "coeffs": cmd_coeffs, "simulate": cmd_simulate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be >= 1")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"artifact: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"artifact: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"artifact: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
