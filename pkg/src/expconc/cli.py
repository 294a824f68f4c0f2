"""Command-line front end: ``certify``, ``bound``, ``solve``, ``experiment``, ``fit-rate``.

Reports are JSON on stdout (or files for ``experiment``). Errors are one
JSON line on stderr. Exit codes: 0 ok, 1 usage error, 2 numeric or solver
failure, 3 failed ``experiment --check``.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import os
import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import __version__, bounds
from .calculus import SamplingPlan, expconcavity_check, max_beta_estimate
from .experiments import (
    DataError,
    ExperimentConfig,
    ExperimentError,
    fit_rate,
    read_trials_csv,
    run_trials,
    summarize,
)
from .problem import (
    CapabilityError,
    Dataset,
    Domain,
    L1,
    ParameterError,
    ProblemSpec,
    SquareLoss,
    UsageError,
    curvature_sigma,
    make_loss,
    make_regularizer,
)
from .solver import DykstraError, NumericError, SolverConfig, solve_erm, solve_penalized_erm

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3
SEED_ENV = "EXPCONC_SEED"

RATE_BAND = (-1.25, -0.75)
MIN_R2 = 0.95


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _env_seed(default: int) -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}")


# --------------------------------------------------------------------------
# subcommands


def cmd_certify(args, out):
    loss = make_loss(args.loss)
    domain = Domain(args.radius, args.dim)
    seed = args.seed if args.seed is not None else _env_seed(0)
    plan = SamplingPlan(n_w=args.n_w, n_z=args.n_z, seed=seed, y_max=args.ymax)
    config = {"loss": args.loss, "radius": args.radius, "dim": args.dim, "ymax": args.ymax,
              "beta": args.beta, "n_w": args.n_w, "n_z": args.n_z, "seed": seed,
              "estimate": args.estimate}
    doc = {"command": "certify", "config": config}
    if args.beta is not None:
        doc["certificate"] = expconcavity_check(loss, args.beta, domain, plan).to_dict()
    if args.estimate or args.beta is None:
        doc["max_beta_estimate"] = max_beta_estimate(loss, domain, plan)
    out.write(_dump(doc))
    return EXIT_OK


def _bound_consts(args):
    sigma = args.sigma
    if sigma is None:
        if args.beta is None:
            raise UsageError("bound needs --sigma or --beta")
        sigma = curvature_sigma(args.G, args.R, args.beta)
    for name in ("L", "G", "R"):
        if not getattr(args, name) > 0:
            raise ParameterError(f"--{name} must be positive")
    return SimpleNamespace(L=args.L, G=args.G, R=args.R, d=args.d, sigma=sigma)


BOUND_COLUMNS = ["n", "d", "delta", "lemma4", "lemma5_at_eps", "thm1", "thm2"]


def cmd_bound(args, out):
    consts = _bound_consts(args)
    reports = [bounds.bound_report(consts, n, args.delta, eps=args.eps, alpha=args.alpha, B=args.B,
                                   honest=args.honest) for n in args.n]
    if args.csv or len(args.n) > 1:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(BOUND_COLUMNS)
        for r in reports:
            w.writerow([r.n, r.d, repr(r.delta), repr(r.lemma4), repr(r.lemma5), repr(r.thm1),
                        "" if r.thm2 is None else repr(r.thm2)])
        return EXIT_OK
    config = {"L": args.L, "G": args.G, "R": args.R, "d": args.d, "sigma": consts.sigma,
              "beta": args.beta, "delta": args.delta, "n": args.n, "eps": args.eps,
              "alpha": args.alpha, "B": args.B, "honest": args.honest}
    out.write(_dump({"command": "bound", "config": config, "report": reports[0].to_dict()}))
    return EXIT_OK


def read_dataset_csv(path, dim: int) -> Dataset:
    """One row per sample: ``dim`` feature columns then the label. A header row is skipped."""
    rows = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                if i == 0:
                    continue
                raise UsageError(f"{path}: non-numeric row {i + 1}")
    if not rows:
        raise UsageError(f"{path}: no samples")
    arr = np.asarray(rows, dtype=float)
    if arr.shape[1] != dim + 1:
        raise UsageError(f"{path}: expected {dim + 1} columns, found {arr.shape[1]}")
    return Dataset(arr[:, :dim], arr[:, dim])


def cmd_solve(args, out):
    spec = ProblemSpec.from_json(Path(args.problem).read_text())
    data = read_dataset_csv(args.data, spec.dim)
    cfg = SolverConfig(tol=args.tol, max_iters=args.max_iters)
    if args.penalty is None:
        res = solve_erm(spec, data, cfg)
    else:
        res = solve_penalized_erm(spec, data, make_regularizer(args.penalty, args.penalty_lambda), cfg)
    config = {"problem": spec.to_dict(), "data": str(args.data), "n": len(data), "tol": args.tol,
              "max_iters": args.max_iters, "penalty": args.penalty,
              "penalty_lambda": args.penalty_lambda}
    out.write(_dump({"command": "solve", "config": config, "result": res.to_dict()}))
    return EXIT_OK if res.converged else EXIT_NUMERIC


def _default_experiment_doc(d: int, lam: float) -> dict:
    spec = ProblemSpec(SquareLoss(), L1(lam), Domain(1.0, d), L=2.0, beta=0.125)
    return ExperimentConfig(spec).to_dict()


def resolve_experiment_config(args) -> ExperimentConfig:
    """Defaults, then the config file, then flags."""
    doc = _default_experiment_doc(args.d or 5, 0.05 if args.lam is None else args.lam)
    file_doc = json.loads(Path(args.config).read_text()) if args.config else {}
    doc.update(file_doc)
    for key in ("dist_seed", "trial_seed"):
        if key not in file_doc:
            doc[key] = _env_seed(doc[key])
    if args.d is not None:
        doc["spec"]["domain"]["dim"] = args.d
    if args.lam is not None:
        doc["spec"]["reg"] = {"kind": "l1" if args.lam > 0 else "zero", "lambda": args.lam}
    for key in ("trials", "delta", "mode", "m", "noise", "dist_seed", "trial_seed"):
        value = getattr(args, key)
        if value is not None:
            doc[key] = value
    if args.n_grid is not None:
        doc["n_grid"] = args.n_grid
    if doc.get("wbar") is not None and len(doc["wbar"]) != doc["spec"]["domain"]["dim"]:
        doc["wbar"] = None
    return ExperimentConfig.from_dict(doc)


def check_summary(summary: dict) -> list:
    failures = []
    if summary["violations"]:
        failures.append(f"bound violated at n={summary['violations']}")
    fit = summary.get("rate_fit")
    if fit is None:
        failures.append("rate fit unavailable")
    else:
        if not RATE_BAND[0] <= fit["slope"] <= RATE_BAND[1]:
            failures.append(f"slope {fit['slope']:.3f} outside {RATE_BAND}")
        if fit["r2"] < MIN_R2:
            failures.append(f"r2 {fit['r2']:.3f} below {MIN_R2}")
    return failures


def cmd_experiment(args, out):
    cfg = resolve_experiment_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = _dt.datetime.now(_dt.timezone.utc)
    with open(out_dir / "trials.csv", "w", newline="") as fh:
        records = run_trials(cfg, fh, threads=args.threads, timing=args.timing)
    summary = summarize(records, cfg.delta, cfg.spec.constants, B=cfg.B, honest=args.honest)
    summary["config"] = cfg.to_dict()
    failures = check_summary(summary) if args.check else []
    summary["check"] = {"enabled": args.check, "failures": failures}
    (out_dir / "summary.json").write_text(_dump(summary))
    (out_dir / "config.json").write_text(_dump(cfg.to_dict()))
    meta = {"started": started.isoformat(),
            "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "version": __version__, "threads": args.threads}
    (out_dir / "metadata.json").write_text(_dump(meta))
    out.write(_dump({"command": "experiment", "out_dir": str(out_dir),
                     "rate_fit": summary["rate_fit"], "violations": summary["violations"],
                     "check": summary["check"]}))
    return EXIT_CHECK if failures else EXIT_OK


def cmd_fit_rate(args, out):
    with open(args.csv, newline="") as fh:
        records = read_trials_csv(fh)
    fit = fit_rate(records, args.statistic)
    out.write(_dump({"command": "fit-rate", "config": {"csv": str(args.csv), "statistic": args.statistic},
                     "fit": fit.to_dict()}))
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="expconc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    c = sub.add_parser("certify", help="sampled exp-concavity check of a built-in loss")
    c.add_argument("--loss", default="square", choices=["square", "logistic", "squared_hinge"])
    c.add_argument("--radius", type=float, default=1.0)
    c.add_argument("--dim", type=int, default=2)
    c.add_argument("--ymax", type=float, default=1.0)
    c.add_argument("--beta", type=float)
    c.add_argument("--estimate", action="store_true", help="also bisect for the largest certified beta")
    c.add_argument("--n-w", type=int, default=512)
    c.add_argument("--n-z", type=int, default=64)
    c.add_argument("--seed", type=int)
    c.set_defaults(func=cmd_certify)

    b = sub.add_parser("bound", help="evaluate the explicit bounds")
    b.add_argument("--L", type=float, required=True)
    b.add_argument("--G", type=float, required=True)
    b.add_argument("--R", type=float, required=True)
    b.add_argument("--d", type=int, required=True)
    b.add_argument("--sigma", type=float)
    b.add_argument("--beta", type=float)
    b.add_argument("--delta", type=float, required=True)
    b.add_argument("--n", type=int, nargs="+", required=True)
    b.add_argument("--eps", type=float)
    b.add_argument("--alpha", type=float)
    b.add_argument("--B", type=float)
    b.add_argument("--honest", action="store_true", help="evaluate at delta/2 for a 1-delta statement")
    b.add_argument("--csv", action="store_true", help="CSV output even for a single n")
    b.set_defaults(func=cmd_bound)

    s = sub.add_parser("solve", help="minimize the empirical objective for a dataset")
    s.add_argument("--problem", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--max-iters", type=int, default=100_000)
    s.add_argument("--penalty", choices=["zero", "l1", "l2sq"])
    s.add_argument("--penalty-lambda", type=float, default=0.0)
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("experiment", help="Monte Carlo excess-risk experiment")
    e.add_argument("--config")
    e.add_argument("--out-dir", required=True)
    e.add_argument("--d", type=int)
    e.add_argument("--lam", type=float)
    e.add_argument("--trials", type=int)
    e.add_argument("--n-grid", type=int, nargs="+")
    e.add_argument("--delta", type=float)
    e.add_argument("--mode", choices=["erm", "penalized"])
    e.add_argument("--m", type=int)
    e.add_argument("--noise", type=float)
    e.add_argument("--dist-seed", type=int)
    e.add_argument("--trial-seed", type=int)
    e.add_argument("--threads", type=int, default=1)
    e.add_argument("--timing", action="store_true", help="fill the wall_ms column")
    e.add_argument("--honest", action="store_true")
    e.add_argument("--check", action="store_true", help="exit 3 unless rate band and bound dominance hold")
    e.set_defaults(func=cmd_experiment)

    f = sub.add_parser("fit-rate", help="log-log slope of a trials CSV")
    f.add_argument("--csv", required=True)
    f.add_argument("--statistic", default="median")
    f.set_defaults(func=cmd_fit_rate)
    return p


def _error(code: int, exc: BaseException, context: str) -> int:
    rec = {"code": code, "error": type(exc).__name__, "message": str(exc), "context": context}
    sys.stderr.write(json.dumps(rec, sort_keys=True) + "\n")
    return code


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    argv = sys.argv[1:] if argv is None else list(argv)
    context = argv[0] if argv else ""
    try:
        args = build_parser().parse_args(argv)
        return args.func(args, out)
    except (UsageError, ParameterError, CapabilityError, DataError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        return _error(EXIT_USAGE, exc, context)
    except (NumericError, DykstraError, ExperimentError, ArithmeticError) as exc:
        return _error(EXIT_NUMERIC, exc, context)


if __name__ == "__main__":
    sys.exit(main())
