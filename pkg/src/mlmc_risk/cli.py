"""Command-line front end.

Subcommands::

    mlmc-risk estimate            --config run.toml --out results/
    mlmc-risk reliability         --config study.toml --out results/
    mlmc-risk complexity          --config study.toml --out results/
    mlmc-risk compare-estimators  --config study.toml --out results/

Exit codes: 0 success, 1 configuration error, 2 tolerance not met,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import warnings
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__, studies
from .config import CmlmcConfig, ConfigError, StudyConfig, load_config
from .models import SolverError
from .tuning import CmlmcError, RunResult, cmlmc_run

log = logging.getLogger("mlmc_risk")

EXIT_OK, EXIT_CONFIG, EXIT_TOLERANCE, EXIT_NUMERICAL = 0, 1, 2, 3
THREADS_ENV = "MLMC_RISK_THREADS"


def _num(x):
    """JSON-safe float: non-finite values become None."""
    x = float(x)
    return x if math.isfinite(x) else None


def result_to_dict(res: RunResult) -> dict:
    a = res.assessment
    rep, risk, est = a.report, a.risk, a.estimate
    trace, timing_trace = [], []
    for rec in res.trace:
        d = asdict(rec)
        timing_trace.append({"iteration": rec.iteration, "wall_time": d.pop("wall_time")})
        d["eps_a"] = _num(d["eps_a"])
        trace.append(d)
    levels = [
        {
            "level": ls.level,
            "v_hat": ls.v_hat,
            "b_hat_new": None if ls.b_hat_new is None else {str(m): v for m, v in ls.b_hat_new.items()},
            "cost": ls.cost,
        }
        for ls in rep.levels
    ]
    return {
        "version": __version__,
        "config": res.config.to_dict(),
        "config_hash": res.config.digest(),
        "converged": res.converged,
        "warnings": list(res.warnings),
        "risk": {
            "tau": risk.tau,
            "var_hat": risk.var_hat,
            "cvar_hat": risk.cvar_hat,
            "k": list(risk.k),
            "mse_estimate": a.mse[0],
            "mse_interp": a.mse[1],
            "mse_bias": a.mse[2],
            "mse_stat": a.mse[3],
        },
        "errors": {
            "interp": {str(m): v for m, v in rep.interp.items()},
            "bias": {str(m): v for m, v in rep.bias.items()},
            "stat": {str(m): v for m, v in rep.stat.items()},
            "alphas": {str(m): v for m, v in rep.alphas.items()},
            "r_e": rep.r_e,
            "v_tilde": list(rep.v_tilde),
            "n_bs": rep.n_bs,
            "bootstrap_capped": rep.bootstrap_capped,
            "norm4": rep.norm4,
            "levels": levels,
        },
        "estimate": {
            "theta_min": est.grid.theta_min,
            "theta_max": est.grid.theta_max,
            "n": est.grid.n,
            "pointwise": [float(v) for v in est.pointwise],
        },
        "hierarchy": {
            "L": res.hierarchy.L,
            "N": res.hierarchy.counts,
            "per_sample_cost": res.hierarchy.per_sample_costs,
            "total_cost": res.hierarchy.total_cost,
        },
        "trace": trace,
        "timing": {
            "sampling_wall_time": res.hierarchy.wall_time,
            "level_wall_time": [ls.wall_time for ls in res.hierarchy.levels],
            "iterations": timing_trace,
        },
    }


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_csv(path: Path, rows, columns, meta: dict):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for key, val in meta.items():
            fh.write(f"# {key}={val}\n")
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({c: (repr(float(row[c])) if isinstance(row[c], float) else row[c]) for c in columns})


def _meta(cfg: CmlmcConfig, command: str) -> dict:
    return {"command": command, "config_hash": cfg.digest(), "seed": cfg.seed, "model": cfg.model, "tau": cfg.tau}


def cmd_estimate(cfg: CmlmcConfig, study: StudyConfig, out: Path, threads: int) -> int:
    code = EXIT_OK
    try:
        res = cmlmc_run(cfg, threads=threads)
    except CmlmcError as exc:
        log.error("%s", exc)
        if exc.result is None:
            return EXIT_TOLERANCE
        res, code = exc.result, EXIT_TOLERANCE
    (out / "result.json").write_text(dumps(result_to_dict(res)), encoding="utf-8")

    curve = res.estimate.curve
    theta = res.risk.theta
    rows = [
        {
            "theta": float(t),
            "phi": float(p0),
            "dphi": float(p1),
            "d2phi": float(p2),
            "cdf": float(F),
            "pdf": float(f),
            "cdf_clipped": float(Fc),
        }
        for t, p0, p1, p2, F, f, Fc in zip(
            theta, curve(theta, 0), curve(theta, 1), curve(theta, 2), res.risk.cdf, res.risk.pdf, res.risk.cdf_clipped
        )
    ]
    write_csv(out / "curves.csv", rows, list(rows[0]), _meta(cfg, "estimate"))
    log.info("VaR %.6f  CVaR %.6f  MSE %.3g (eps^2 %.3g)", res.risk.var_hat, res.risk.cvar_hat, res.mse, cfg.eps**2)
    return code


def _study_defaults(cfg, study):
    if not study.tolerances:
        study = replace(study, tolerances=(cfg.eps,))
    return study


def cmd_reliability(cfg, study, out: Path, threads: int) -> int:
    rows = studies.reliability(cfg, _study_defaults(cfg, study), threads)
    cols = ["tolerance", "rep", "stat", "true_sq_err", "est_mse", "cost"]
    write_csv(out / "reliability.csv", rows, cols, _meta(cfg, "reliability"))
    return EXIT_OK


def cmd_complexity(cfg, study, out: Path, threads: int) -> int:
    rows = studies.complexity(cfg, _study_defaults(cfg, study), threads)
    write_csv(out / "complexity.csv", rows, ["tolerance", "mean_mlmc_cost", "mc_cost_estimate"], _meta(cfg, "complexity"))
    return EXIT_OK


def cmd_compare_estimators(cfg, study, out: Path, threads: int) -> int:
    if cfg.model != "poisson":
        raise ConfigError("model.name: estimator comparison needs the Poisson model (exact Phi)", key="model.name")
    theta = (cfg.theta_min, cfg.theta_max)
    meta = _meta(cfg, "compare-estimators")
    reps = study.repetitions
    outputs = {
        "interp": studies.interpolation_study(cfg.tau, theta),
        "bias": studies.bias_study(cfg.seed, cfg.tau, theta, reps=reps, sizes=(10, 100, 1000)),
        "bias_decay": studies.bias_decay_study(cfg.seed, cfg.tau, theta, reps=reps),
        "stat": studies.stat_study(cfg.seed, cfg.tau, theta, n_ref=study.n_ref),
    }
    for name, rows in outputs.items():
        write_csv(out / f"est_compare_{name}.csv", rows, list(rows[0]), meta)
    return EXIT_OK


COMMANDS = {
    "estimate": cmd_estimate,
    "reliability": cmd_reliability,
    "complexity": cmd_complexity,
    "compare-estimators": cmd_compare_estimators,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mlmc-risk", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML file with flat dotted keys")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override run.seed")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    threads = args.threads
    if os.environ.get(THREADS_ENV):
        try:
            threads = int(os.environ[THREADS_ENV])
        except ValueError:
            print(f"error: {THREADS_ENV} must be an integer", file=sys.stderr)
            return EXIT_CONFIG
    try:
        cfg, study = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed).validate()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        with warnings.catch_warnings():
            if not args.verbose:
                warnings.simplefilter("ignore", RuntimeWarning)
            return COMMANDS[args.command](cfg, study, out, max(1, threads))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
