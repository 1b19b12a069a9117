"""Experiment configuration and the Monte Carlo study runner.

A study draws ``replicates`` fields for every half-width ``n`` in the config,
estimates ``(lambda, theta_o)``, runs the isotropy test, and summarizes
bias, RMSE, rejection rates and Kolmogorov-Smirnov distances per ``n``.
Replicate ``r`` uses the seed ``base_seed XOR splitmix64(r)`` for every ``n``,
so results do not depend on the number of worker threads.
"""

from __future__ import annotations

import math
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .covariance import IsotropicCovariance
from .estimator import (EstimateCase, InadmissibleRatio, confidence_region, estimate,
                        estimate_lambda1, estimate_tau, limit_cdf_fU)
from .fieldsim import AffineModel, GridField, replicate_seed, sample_field
from .isotest import iso_factor, statistic_T, statistic_Xi
from .levelcurve import (NoCrossing, extract_level_curve, functional_triple, level_functional, one,
                         smoothed_functional)
from .varstack import DegenerateVariance, build_stack

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

SCHEMA_LINE = "# schema=1\n"


class ConfigError(ValueError):
    """Malformed or incomplete configuration; the message names the key and line."""


@dataclass(frozen=True)
class StudyConfig:
    cov: IsotropicCovariance
    model: AffineModel
    n_list: tuple
    h: float
    u: float
    Q: int
    replicates: int
    seed: int
    alpha: float
    out: str
    coverage: bool = False
    sigmas: tuple = ()
    smoothing_samples: int = 0

    def __post_init__(self):
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if not self.n_list:
            raise ConfigError("grid.n must list at least one half-width")

    def with_seed(self, seed: int) -> "StudyConfig":
        return replace(self, seed=int(seed))


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------

def _key_line(text: str, section: str | None, key: str) -> int | None:
    """1-based line of ``key = ...`` inside ``[section]`` (or the root table)."""
    current = None
    pattern = re.compile(rf"^\s*{re.escape(key)}\s*=")
    for lineno, line in enumerate(text.splitlines(), start=1):
        head = re.match(r"^\s*\[([^\]]+)\]", line)
        if head:
            current = head.group(1).strip()
            continue
        if current == section and pattern.match(line):
            return lineno
    return None


class _Reader:
    def __init__(self, text: str, data: dict):
        self.text = text
        self.data = data

    def _where(self, section, key):
        name = f"{section}.{key}" if section else key
        line = _key_line(self.text, section, key)
        return name, (f"line {line}: " if line else "")

    def get(self, section, key, kind, default=None, required=True):
        table = self.data.get(section, {}) if section else self.data
        name, at = self._where(section, key)
        if not isinstance(table, dict):
            raise ConfigError(f"{at}[{section}] must be a table")
        if key not in table:
            if required and default is None:
                raise ConfigError(f"missing required key '{name}'")
            return default
        value = table[key]
        try:
            if kind is float:
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise TypeError
                return float(value)
            if kind is int:
                if isinstance(value, bool) or not isinstance(value, int):
                    raise TypeError
                return int(value)
            if kind is bool:
                if not isinstance(value, bool):
                    raise TypeError
                return value
            if kind is str:
                if not isinstance(value, str):
                    raise TypeError
                return value
            if kind is list:
                seq = value if isinstance(value, list) else [value]
                if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in seq):
                    raise TypeError
                return [float(v) for v in seq]
        except TypeError:
            raise ConfigError(f"{at}'{name}' has the wrong type (expected {kind.__name__})") from None
        raise AssertionError(kind)

    def check(self, section, key, ok: bool, message: str):
        if not ok:
            name, at = self._where(section, key)
            raise ConfigError(f"{at}'{name}' {message}")


def parse_config(text: str, base_dir: str | Path = ".") -> StudyConfig:
    """Parse TOML config text; every error message carries the key and its line."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    rd = _Reader(text, data)

    family = rd.get("covariance", "family", str, "squared_exponential")
    variance = rd.get("covariance", "variance", float)
    length = rd.get("covariance", "length_scale", float)
    rd.check("covariance", "variance", variance > 0, "must be positive")
    rd.check("covariance", "length_scale", length > 0, "must be positive")
    try:
        cov = IsotropicCovariance.from_dict({"family": family, "variance": variance, "length_scale": length})
    except ValueError:
        raise ConfigError(f"unknown covariance family '{family}'") from None

    lambda1 = rd.get("model", "lambda1", float)
    lam = rd.get("model", "lambda", float)
    rd.check("model", "lambda1", lambda1 > 0, "must be positive")
    rd.check("model", "lambda", 0 < lam <= 1, "must lie in (0, 1]")
    vstar = rd.get("model", "vstar", list, [1.0, 0.0])
    rd.check("model", "vstar", len(vstar) == 2 and abs(math.hypot(*vstar) - 1) < 1e-9,
             "must be a unit 2-vector")
    theta = rd.get("model", "theta_o", float, required=False)
    phi = rd.get("model", "basis_angle", float, required=False)
    if theta is not None and phi is not None:
        raise ConfigError("give only one of 'model.theta_o' and 'model.basis_angle'")
    if theta is not None:
        rd.check("model", "theta_o", -math.pi / 2 < theta <= math.pi / 2, "must lie in (-pi/2, pi/2]")
        model = AffineModel.from_theta(lambda1, lam, theta, tuple(vstar))
    else:
        model = AffineModel(lambda1, lam, phi or 0.0, tuple(vstar))

    n_list = rd.get("grid", "n", list)
    rd.check("grid", "n", len(n_list) > 0 and all(v > 0 and float(v).is_integer() for v in n_list),
             "must list positive integers")
    h = rd.get("grid", "h", float, 0.25)
    rd.check("grid", "h", h > 0, "must be positive")

    u = rd.get("level", "u", float, 0.0)
    Q = rd.get("chaos", "Q", int, 8)
    rd.check("chaos", "Q", 1 <= Q <= 12, "must lie in [1, 12]")
    replicates = rd.get(None, "replicates", int)
    rd.check(None, "replicates", replicates >= 1, "must be >= 1")
    seed = rd.get(None, "seed", int)
    rd.check(None, "seed", seed >= 0, "must be nonnegative")
    alpha = rd.get(None, "alpha", float, 0.05)
    rd.check(None, "alpha", 0 < alpha < 1, "must lie in (0, 1)")
    out = rd.get(None, "out", str, "out")
    coverage = rd.get(None, "coverage", bool, False)
    sigmas = rd.get("smoothing", "sigmas", list, [])
    rd.check("smoothing", "sigmas", all(s > 0 for s in sigmas), "must be positive")
    samples = rd.get("smoothing", "samples", int, 20 if sigmas else 0)
    out_path = Path(out) if Path(out).is_absolute() else Path(base_dir) / out
    return StudyConfig(cov, model, tuple(int(v) for v in n_list), h, u, Q, replicates, seed, alpha,
                       str(out_path), coverage, tuple(sigmas), samples)


def load_config(path) -> StudyConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text, path.parent)


# ---------------------------------------------------------------------------
# Replicates
# ---------------------------------------------------------------------------

@dataclass
class Replicate:
    n: int
    index: int
    seed: int
    status: str = "ok"  # ok | no_crossing | inadmissible
    x_n: float = math.nan
    y_n: float = math.nan
    j_one: float = math.nan
    lambda_hat: float = math.nan
    theta_hat: float = math.nan
    case: str = ""
    tau_hat: float = math.nan
    lambda1_hat: float = math.nan
    xi: float = math.nan
    p_value: float = math.nan
    reject: int = 0
    covered: int = -1  # -1 when no region was built
    extra: dict = field(default_factory=dict)


REPLICATE_COLUMNS = ("n", "replicate", "seed", "status", "x_n", "y_n", "j_one", "lambda_hat",
                     "theta_hat", "case", "tau_hat", "lambda1_hat", "xi", "p_value", "reject", "covered")


def analyse_field(cfg: StudyConfig, grid: GridField, n: int, index: int = 0, seed: int = 0) -> Replicate:
    """Estimate and test on one field; the outcome is recorded rather than raised."""
    rep = Replicate(n, index, seed)
    try:
        triple = functional_triple(extract_level_curve(grid, cfg.u), cfg.model.vstar, n)
    except NoCrossing:
        rep.status = "no_crossing"
        return rep
    rep.x_n, rep.y_n, rep.j_one = triple.x_n, triple.y_n, triple.j_one
    try:
        est = estimate(triple.x_n, triple.y_n, n=n)
    except InadmissibleRatio:
        rep.status = "inadmissible"
        return rep
    rep.lambda_hat, rep.theta_hat, rep.case = est.lambda_hat, est.theta_hat, est.case.value
    rep.tau_hat = estimate_tau(triple.j_one, cfg.u, cfg.cov)
    rep.lambda1_hat = estimate_lambda1(triple.j_one, cfg.u, est.lambda_hat, cfg.cov)
    t_vec = statistic_T(triple, cfg.model.vstar, n)
    res = statistic_Xi(t_vec, rep.tau_hat, iso_factor(cfg.cov, cfg.u, cfg.model.vstar, cfg.Q), cfg.alpha, n, cfg.u)
    rep.xi, rep.p_value, rep.reject = res.xi, res.p_value, int(res.reject)
    if cfg.coverage and est.case is EstimateCase.INTERIOR:
        fitted = AffineModel.from_theta(rep.lambda1_hat, est.lambda_hat, est.theta_hat, cfg.model.vstar)
        try:
            stack = build_stack(cfg.u, cfg.cov, fitted, cfg.Q)
            region = confidence_region(est, stack, n, cfg.alpha).ci
            truth = (cfg.model.lam, cfg.model.theta_o)
            rep.covered = int(region.contains((est.lambda_hat, est.theta_hat), truth))
        except (DegenerateVariance, ValueError):
            rep.covered = -1
    return rep


def run_replicate(cfg: StudyConfig, n: int, index: int) -> Replicate:
    seed = replicate_seed(cfg.seed, index)
    grid = sample_field(cfg.cov, cfg.model, n, cfg.h, seed)
    return analyse_field(cfg, grid, n, index, seed)


def run_replicates(cfg: StudyConfig, threads: int = 1) -> list[Replicate]:
    """Every ``(n, replicate)`` pair, returned in config order whatever ``threads`` is."""
    jobs = [(n, r) for n in cfg.n_list for r in range(cfg.replicates)]
    if threads <= 1:
        return [run_replicate(cfg, n, r) for n, r in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: run_replicate(cfg, *job), jobs))


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------

SUMMARY_COLUMNS = ("n", "replicates", "valid", "lambda_bias", "lambda_rmse", "lambda_median_abs_err",
                   "theta_bias", "theta_rmse", "rejection_rate", "mean_xi", "ks_lambda", "tau_mean",
                   "coverage")


def reference_stack(cfg: StudyConfig):
    return build_stack(cfg.u, cfg.cov, cfg.model, cfg.Q)


def ks_lambda(lams: np.ndarray, n: int, cfg: StudyConfig, stack) -> float:
    """KS distance of the scaled estimation error against its limit law.

    Anisotropic models compare ``2n (lambda_hat - lambda) / sqrt(Sigma_11)``
    with N(0, 1); the isotropic model compares ``2n (1 - lambda_hat)`` with
    the law of ``sqrt(U)``.
    """
    if len(lams) == 0:
        return math.nan
    if stack.isotropic:
        scaled = 2.0 * n * (1.0 - lams)
        return float(stats.kstest(scaled, lambda s: limit_cdf_fU(np.asarray(s) ** 2,
                                                                 stack.sigma_star_basis)).statistic)
    z = 2.0 * n * (lams - cfg.model.lam) / math.sqrt(stack.sigma_param[0, 0])
    return float(stats.kstest(z, "norm").statistic)


def summarize(cfg: StudyConfig, reps: list[Replicate]) -> list[dict]:
    stack = reference_stack(cfg)
    rows = []
    for n in cfg.n_list:
        mine = [r for r in reps if r.n == n]
        ok = [r for r in mine if r.status == "ok"]
        lams = np.array([r.lambda_hat for r in ok])
        thetas = np.array([r.theta_hat for r in ok if not math.isnan(r.theta_hat)])
        row = {"n": n, "replicates": len(mine), "valid": len(ok)}
        if ok:
            err = lams - cfg.model.lam
            row.update(lambda_bias=err.mean(), lambda_rmse=math.sqrt(np.mean(err ** 2)),
                       lambda_median_abs_err=float(np.median(np.abs(err))),
                       rejection_rate=np.mean([r.reject for r in ok]),
                       mean_xi=np.mean([r.xi for r in ok]), ks_lambda=ks_lambda(lams, n, cfg, stack),
                       tau_mean=np.mean([r.tau_hat for r in ok]))
            if cfg.model.lam < 1.0 and len(thetas):
                terr = thetas - cfg.model.theta_o
                row.update(theta_bias=terr.mean(), theta_rmse=math.sqrt(np.mean(terr ** 2)))
            cov_flags = [r.covered for r in ok if r.covered >= 0]
            if cov_flags:
                row["coverage"] = float(np.mean(cov_flags))
        rows.append(row)
    return rows


def smoothing_rows(cfg: StudyConfig) -> list[dict]:
    """Mean ``|J_1(u, sigma) - J_1(u)|`` over ``smoothing_samples`` fields at the first ``n``."""
    if not cfg.sigmas:
        return []
    n = cfg.n_list[0]
    diffs = {s: [] for s in cfg.sigmas}
    for r in range(cfg.smoothing_samples):
        grid = sample_field(cfg.cov, cfg.model, n, cfg.h, replicate_seed(cfg.seed, r))
        exact = float(level_functional(extract_level_curve(grid, cfg.u), one))
        for s in cfg.sigmas:
            diffs[s].append(abs(float(smoothed_functional(grid, cfg.u, s)) - exact))
    return [{"sigma": s, "samples": cfg.smoothing_samples, "mean_abs_diff": float(np.mean(diffs[s]))}
            for s in cfg.sigmas]


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "" if math.isnan(value) else f"{float(value):.17g}"
    return str(value)


def write_csv(path, columns, rows) -> None:
    """CSV with the schema comment and a header; ``rows`` are dicts or sequences."""
    with open(path, "w", newline="") as fh:
        fh.write(SCHEMA_LINE)
        fh.write(",".join(columns) + "\n")
        for row in rows:
            cells = [row.get(c) for c in columns] if isinstance(row, dict) else list(row)
            fh.write(",".join(fmt(c) for c in cells) + "\n")


def replicate_dict(rep: Replicate) -> dict:
    d = {k: getattr(rep, k) for k in REPLICATE_COLUMNS if hasattr(rep, k)}
    d["replicate"] = rep.index
    return d


def svg_lines(path, series: dict, title: str, xlabel: str, ylabel: str,
              width: int = 480, height: int = 320) -> None:
    """Minimal line plot: one polyline per named series of ``(x, y)`` points."""
    pad = 48
    pts = [(x, y) for s in series.values() for x, y in s if not (math.isnan(x) or math.isnan(y))]
    if not pts:
        pts = [(0.0, 0.0), (1.0, 1.0)]
    xs, ys = zip(*pts)
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(min(ys), 0.0), max(ys)
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def px(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def py(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
           f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
           f'<text x="{width / 2:.1f}" y="{height - 10}" text-anchor="middle" font-size="12">{xlabel}</text>',
           f'<text x="14" y="{height / 2:.1f}" font-size="12" transform="rotate(-90 14 {height / 2:.1f})" '
           f'text-anchor="middle">{ylabel}</text>',
           f'<text x="{pad}" y="{height - pad + 16}" font-size="10" text-anchor="middle">{x0:.3g}</text>',
           f'<text x="{width - pad}" y="{height - pad + 16}" font-size="10" text-anchor="middle">{x1:.3g}</text>',
           f'<text x="{pad - 4}" y="{height - pad}" font-size="10" text-anchor="end">{y0:.3g}</text>',
           f'<text x="{pad - 4}" y="{pad + 4}" font-size="10" text-anchor="end">{y1:.3g}</text>']
    for i, (name, s) in enumerate(series.items()):
        good = [(x, y) for x, y in s if not (math.isnan(x) or math.isnan(y))]
        if not good:
            continue
        colour = colours[i % len(colours)]
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in good)
        out.append(f'<polyline points="{coords}" fill="none" stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{width - pad}" y="{pad + 14 * i}" font-size="11" fill="{colour}" '
                   f'text-anchor="end">{name}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


def run_study(cfg: StudyConfig, threads: int = 1) -> dict:
    """Run replicates, write replicates/summary CSVs and plots under ``cfg.out``."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    reps = run_replicates(cfg, threads)
    summary = summarize(cfg, reps)
    write_csv(out / "replicates.csv", REPLICATE_COLUMNS, [replicate_dict(r) for r in reps])
    write_csv(out / "summary.csv", SUMMARY_COLUMNS, summary)
    nan = math.nan
    svg_lines(out / "rmse.svg",
              {"lambda": [(r["n"], r.get("lambda_rmse", nan)) for r in summary],
               "theta": [(r["n"], r.get("theta_rmse", nan)) for r in summary]},
              "RMSE of the estimators", "n", "RMSE")
    svg_lines(out / "rejection.svg", {"rate": [(r["n"], r.get("rejection_rate", nan)) for r in summary]},
              "Isotropy test rejection rate", "n", "rate")
    smooth = smoothing_rows(cfg)
    if smooth:
        write_csv(out / "smoothing.csv", ("sigma", "samples", "mean_abs_diff"), smooth)
        svg_lines(out / "smoothing.svg", {"|J(u,s) - J(u)|": [(r["sigma"], r["mean_abs_diff"]) for r in smooth]},
                  "Smoothed functional error", "sigma", "mean abs diff")
    return {"replicates": reps, "summary": summary, "smoothing": smooth}
