"""Command-line interface.

Subcommands::

    bmdlink fit      DATA.csv               fitted link-family model
    bmdlink bmd      DATA.csv --bmr ...     BMD per BMR
    bmdlink bmdl     DATA.csv --bmr ...     BMD and lower bounds per method
    bmdlink ma       DATA.csv --bmr ...     model-averaged BMD
    bmdlink compare  DATA.csv --bmr ...     bmdl plus ma
    bmdlink simulate --scenarios ...        Monte-Carlo studies

Options may also come from a flat ``key=value`` file given with
``--config``, using the long option names (``bmr = 0.01, 0.1``); command-line
flags take precedence.

Exit status: 0 success, 1 validation error, 2 numerical failure (no usable
fit), 3 I/O error.  Warnings never change the exit status.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import logging
import math
import os
import sys
import tempfile
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .averaging import ModelAveragingError, estimate_bmd_ma
from .bmd import UnreachableTargetError, estimate_bmd
from .bmdl import METHODS, ConstrainedProfile, MethodUnavailableError, compute_bmdl
from .dataset import DataValidationError, center, read_csv
from .likelihood import FitOptions, fit_mle
from .link import risk
from .simulation import ScreeningError, run_armb_study, run_coverage_study

__all__ = ["EXIT_IO", "EXIT_NUMERICAL", "EXIT_OK", "EXIT_VALIDATION", "main", "build_parser"]

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3

COMMANDS = ("fit", "bmd", "bmdl", "ma", "simulate", "compare")
PLOT_POINTS = 200

# built-in defaults; None in argparse means "not given on the command line"
_DEFAULTS: dict[str, Any] = {
    "bmr": [0.01, 0.1],
    "level": 0.95,
    "methods": list(METHODS),
    "seed": None,
    "replicates": None,
    "output": None,
    "format": "json",
    "normalize": True,
    "deterministic": False,
    "plot_data": None,
    "scenarios": [1, 2, 3, 4, 5, 6],
    "n": [25, 50, 100],
    "study": "armb",
    "alpha_box": 8.0,
}
_LIST_KEYS = {"bmr": float, "methods": str, "scenarios": int, "n": int}
_SCALAR_KEYS = {"level": float, "seed": int, "replicates": int, "output": str, "format": str,
                "plot_data": str, "study": str, "alpha_box": float, "input": str}
_FLAG_KEYS = {"normalize", "deterministic"}


class UsageError(ValueError):
    """Invalid configuration."""


class NumericalFailure(RuntimeError):
    """No usable fit."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def read_config(path: str | Path) -> dict[str, Any]:
    """Parse a flat ``key=value`` file.  ``#`` starts a comment."""
    out: dict[str, Any] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        try:
            if key in _LIST_KEYS:
                parts = [p for p in value.replace(",", " ").split() if p]
                out[key] = [_LIST_KEYS[key](p) for p in parts]
            elif key in _SCALAR_KEYS:
                out[key] = _SCALAR_KEYS[key](value)
            elif key in _FLAG_KEYS:
                low = value.lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                out[key] = low in ("true", "1", "yes")
            else:
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, UsageError):
                raise
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return out


def _add_common(p: argparse.ArgumentParser, data: bool = True) -> None:
    if data:
        p.add_argument("input", nargs="?", help="CSV with header dose,n,events")
    p.add_argument("--config", help="flat key=value configuration file")
    p.add_argument("--bmr", type=float, nargs="+", help="benchmark response(s), default 0.01 0.1")
    p.add_argument("--level", type=float, help="one-sided confidence level, default 0.95")
    p.add_argument("--methods", nargs="*", help=f"subset of {' '.join(METHODS)} (empty means all)")
    p.add_argument("--seed", type=int, help="master seed (required for BT and simulate)")
    p.add_argument("--replicates", type=int, help="bootstrap or Monte-Carlo replicates")
    p.add_argument("--output", "-o", help="output path (default stdout)")
    p.add_argument("--format", choices=("json", "csv"), help="output format, default json")
    p.add_argument("--normalize", dest="normalize", action="store_const", const=True,
                   help="divide centered doses by their largest magnitude when fitting (default)")
    p.add_argument("--no-normalize", dest="normalize", action="store_const", const=False)
    p.add_argument("--deterministic", action="store_const", const=True,
                   help="omit the timestamp so identical runs give identical bytes")
    p.add_argument("--plot-data", help="write dose-response curve samples to this CSV")
    p.add_argument("--alpha-box", type=float, help="half-width of the link-parameter box, default 8")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bmdlink", description="Benchmark dose estimation")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "fit": "fit the link-family model",
        "bmd": "benchmark doses",
        "bmdl": "benchmark doses and lower bounds",
        "ma": "model-averaged benchmark doses",
        "compare": "lower bounds and model averaging side by side",
        "simulate": "Monte-Carlo ARMB or coverage studies",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        _add_common(p, data=name != "simulate")
        if name == "simulate":
            p.add_argument("--scenarios", type=int, nargs="+", help="scenario ids, default 1-6")
            p.add_argument("--n", type=int, nargs="+", help="group sizes, default 25 50 100")
            p.add_argument("--study", choices=("armb", "coverage", "both"), help="default armb")
    return parser


def resolve_config(args: argparse.Namespace) -> dict[str, Any]:
    """Merge built-in defaults, the config file and the command line."""
    cfg = dict(_DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(read_config(args.config))
    for key, value in vars(args).items():
        if key in ("config", "verbose"):
            continue
        if value is not None:
            cfg[key] = value
    if cfg.get("methods") == []:
        cfg["methods"] = list(METHODS)
    cfg["methods"] = [m.upper() for m in cfg["methods"]]
    for m in cfg["methods"]:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}; expected one of {', '.join(METHODS)}")
    for b in cfg["bmr"]:
        if not 0 < b < 1:
            raise UsageError(f"bmr must lie in (0, 1), got {b}")
    if not 0.5 < cfg["level"] < 1:
        raise UsageError(f"level must lie in (0.5, 1), got {cfg['level']}")
    if cfg["alpha_box"] <= 0:
        raise UsageError("alpha-box must be positive")
    cmd = cfg["command"]
    stochastic = cmd == "simulate" or (cmd in ("bmdl", "compare") and "BT" in cfg["methods"])
    if stochastic and cfg["seed"] is None:
        raise UsageError("a --seed is required for the bootstrap and for simulations")
    if cmd != "simulate" and not cfg.get("input"):
        raise UsageError("an input CSV is required")
    if cfg["replicates"] is not None and cfg["replicates"] < 1:
        raise UsageError("replicates must be >= 1")
    return cfg


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _clean(obj: Any, warnings: list[str], path: str = "") -> Any:
    """JSON-ready copy; non-finite numbers become null with a warning."""
    if isinstance(obj, dict):
        return {str(k): _clean(v, warnings, f"{path}.{k}" if path else str(k)) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v, warnings, f"{path}[{i}]") for i, v in enumerate(obj)]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist(), warnings, path)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            warnings.append(f"{path} is {v} (written as null)")
            return None
        return v
    return obj


def _flatten(obj: Any, prefix: str = "") -> list[tuple[str, Any]]:
    if isinstance(obj, dict):
        rows = []
        for k, v in obj.items():
            rows.extend(_flatten(v, f"{prefix}.{k}" if prefix else k))
        return rows
    if isinstance(obj, list):
        rows = []
        for i, v in enumerate(obj):
            rows.extend(_flatten(v, f"{prefix}[{i}]"))
        return rows
    return [(prefix, obj)]


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render(report: dict, fmt: str) -> str:
    """JSON (shortest round-trip float repr) or CSV.

    The CSV of an estimation report is ``key,value`` over the flattened JSON
    tree; a simulation report is one row per scenario, n, bmr and method.
    """
    if fmt == "json":
        return json.dumps(report, indent=2, allow_nan=False) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if "rows" in report:
        cols = list(report["rows"][0].keys()) if report["rows"] else list(SIM_COLUMNS)
        w.writerow(cols)
        for row in report["rows"]:
            w.writerow([_fmt(row.get(c)) for c in cols])
    else:
        w.writerow(["key", "value"])
        for k, v in _flatten(report):
            w.writerow([k, _fmt(v)])
    return buf.getvalue()


def write_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _fit(cfg, warnings):
    data = read_csv(cfg["input"])
    design = center(data, normalize=cfg["normalize"])
    box = float(cfg["alpha_box"])
    fit = fit_mle(design, data, FitOptions(alpha_box=(-box, box)))
    warnings.extend(fit.warnings)
    if not math.isfinite(fit.loglik):
        raise NumericalFailure("the fit produced no finite log-likelihood")
    return data, design, fit


def _fit_block(fit) -> dict:
    names = ("beta0", "beta1", "alpha1", "alpha2")
    se = fit.standard_errors
    return {
        "delta_hat": dict(zip(names, fit.delta_hat.as_array().tolist())),
        "standard_errors": dict(zip(names, se.tolist())) if se is not None else None,
        "loglik": fit.loglik,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "grad_norm": fit.grad_norm,
        "boundary": fit.boundary,
        "fitted_risks": fit.fitted_risks.tolist(),
        "design": {"dose_mean": fit.design.dose_mean, "scale": fit.design.scale},
    }


def _bmd_block(fit, bmrs, warnings):
    out = []
    for b in bmrs:
        try:
            r = estimate_bmd(fit, fit.design, b)
        except (UnreachableTargetError, ValueError) as exc:
            warnings.append(f"bmd at bmr={b}: {exc}")
            out.append({"bmr": b, "bmd": None})
            continue
        if r.extrapolated:
            warnings.append(f"bmd at bmr={b} lies outside the dose range")
        out.append({
            "bmr": b, "p0": r.p0, "bmre": r.bmre, "lbmr": r.lbmr, "bmd_centered": r.bmd_centered,
            "bmd": r.bmd, "branch": r.branch, "extrapolated": r.extrapolated,
        })
    return out


def _bmdl_block(fit, cfg, warnings):
    out = []
    tau = 1.0 - cfg["level"]
    replicates = cfg["replicates"] or 2000
    for j, b in enumerate(cfg["bmr"]):
        profile = ConstrainedProfile(fit, b)
        for m in cfg["methods"]:
            entry = {"bmr": b, "method": m, "level": cfg["level"], "tau": tau}
            try:
                seed = None if cfg["seed"] is None else int(cfg["seed"]) + j
                r = compute_bmdl(m, fit, b, tau, seed=seed, replicates=replicates, profile=profile)
            except (MethodUnavailableError, UnreachableTargetError, ValueError) as exc:
                warnings.append(f"{m} at bmr={b} unavailable: {exc}")
                entry["bmdl"] = None
                out.append(entry)
                continue
            entry.update(bmdl=r.bmdl, bmd=r.bmd, flags=list(r.flags))
            if m == "BT":
                entry.update(replicates=r.diagnostics["replicates"], dropped=r.diagnostics["dropped"],
                             seed=seed)
                if "unreliable" in r.flags:
                    warnings.append(f"BT at bmr={b}: more than 10% of refits dropped")
            elif m == "ML":
                entry.update(upper=r.upper, chi2_quantile=r.diagnostics["chi2_quantile"])
            else:
                entry.update(chi2_quantile=r.diagnostics["chi2_quantile"],
                             statistic_at_bound=r.diagnostics.get("statistic_at_bound"))
            out.append(entry)
    return out


def _ma_block(data, bmrs, warnings):
    out = []
    for b in bmrs:
        try:
            r = estimate_bmd_ma(data, b)
        except ModelAveragingError as exc:
            warnings.append(f"model averaging at bmr={b}: {exc}")
            out.append({"bmr": b, "bmd_ma": None})
            continue
        for k, why in r.excluded:
            warnings.append(f"model averaging at bmr={b}: model {k} excluded ({why})")
        out.append({
            "bmr": b, "bmd_ma": r.bmd_ma,
            "models": [
                {"model_id": f.model_id, "name": f.name, "params": dict(zip(f.param_names, f.params.tolist())),
                 "loglik": f.loglik, "aic": f.aic, "bmd": f.bmd, "converged": f.converged,
                 "boundary": f.boundary, "weight": float(w)}
                for f, w in zip(r.per_model, r.weights)
            ],
        })
    return out


def _plot_rows(fit):
    d = fit.design.raw_doses
    grid = np.linspace(d[0], d[-1], PLOT_POINTS)
    r = risk(fit.delta_hat, fit.design.to_centered(grid))
    return grid, r


def _write_plot(path, fit):
    grid, r = _plot_rows(fit)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dose", "risk"])
    for x, y in zip(grid, r):
        w.writerow([repr(float(x)), repr(float(y))])
    write_atomic(path, buf.getvalue())


SIM_COLUMNS = ("scenario", "n", "bmr", "study", "method", "value", "replicates_used",
               "screening_rejections", "fit_failures", "seed", "true_bmd")


def _simulate(cfg, warnings):
    rows = []
    studies = ("armb", "coverage") if cfg["study"] == "both" else (cfg["study"],)
    seed = int(cfg["seed"])
    for sid in cfg["scenarios"]:
        if not 1 <= sid <= 6:
            raise UsageError(f"unknown scenario id {sid}")
        for n in cfg["n"]:
            for b in cfg["bmr"]:
                base = {"scenario": sid, "n": n, "bmr": b}
                if "armb" in studies:
                    rep = run_armb_study(sid, n, b, replicates=cfg["replicates"] or 500, seed=seed)
                    for m, v in (("FL", rep.armb_fl), ("MA", rep.armb_ma)):
                        rows.append({**base, "study": "armb", "method": m, "value": v,
                                     "replicates_used": rep.replicates_used,
                                     "screening_rejections": rep.screening_rejections,
                                     "fit_failures": rep.fit_failures, "seed": seed, "true_bmd": rep.true_bmd})
                if "coverage" in studies:
                    rep = run_coverage_study(sid, n, b, level=cfg["level"], replicates=cfg["replicates"] or 200,
                                             seed=seed, methods=tuple(cfg["methods"]))
                    for m, v in rep.coverage.items():
                        rows.append({**base, "study": "coverage", "method": m, "value": v,
                                     "replicates_used": rep.replicates_used,
                                     "screening_rejections": rep.screening_rejections,
                                     "fit_failures": rep.fit_failures, "seed": seed, "true_bmd": rep.true_bmd})
                    unavailable = rep.diagnostics["unavailable"]
                    for m, k in unavailable.items():
                        if k:
                            warnings.append(f"scenario {sid}, n={n}, bmr={b}: {m} unavailable in {k} replicates")
    return rows


def run(cfg: dict[str, Any]) -> dict:
    """Execute one resolved configuration and return the report tree."""
    cmd = cfg["command"]
    warnings: list[str] = []
    inputs = {k: cfg[k] for k in ("command", "bmr", "level", "methods", "seed", "replicates",
                                  "normalize", "alpha_box")}
    report: dict[str, Any] = {"tool": "bmdlink", "version": __version__}
    if cmd == "simulate":
        inputs.update(scenarios=cfg["scenarios"], n=cfg["n"], study=cfg["study"])
        report["inputs"] = inputs
        report["seed_derivation"] = "SeedSequence([seed, scenario, n, round(bmr*1e6), replicate])"
        report["rows"] = _simulate(cfg, warnings)
    else:
        inputs["input"] = str(cfg["input"])
        report["inputs"] = inputs
        data, design, fit = _fit(cfg, warnings)
        report["data"] = {"doses": data.doses.tolist(), "trials": data.trials.tolist(),
                          "events": data.events.tolist()}
        report["fit"] = _fit_block(fit)
        if cmd in ("bmd", "bmdl", "compare"):
            report["bmd"] = _bmd_block(fit, cfg["bmr"], warnings)
            if all(e.get("bmd") is None for e in report["bmd"]) and cmd != "bmd":
                raise NumericalFailure("no finite BMD from the fitted model")
        if cmd in ("bmdl", "compare"):
            if "BT" in cfg["methods"]:
                report["seed_derivation"] = "bootstrap seed = seed + index of bmr; replicate k uses SeedSequence(seed).spawn child k"
            report["bmdl"] = _bmdl_block(fit, cfg, warnings)
        if cmd in ("ma", "compare"):
            report["ma"] = _ma_block(data, cfg["bmr"], warnings)
        if cfg.get("plot_data"):
            _write_plot(cfg["plot_data"], fit)
    if not cfg["deterministic"]:
        report["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
    cleaned_warnings: list[str] = []
    report = _clean(report, cleaned_warnings)
    report["warnings"] = list(warnings) + cleaned_warnings
    return report


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        report = run(cfg)
        text = render(report, cfg["format"])
        if cfg["output"]:
            write_atomic(cfg["output"], text)
        else:
            sys.stdout.write(text)
    except (UsageError, DataValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalFailure, ScreeningError, UnreachableTargetError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    for w in report.get("warnings", []):
        log.warning(w)
    return EXIT_OK
