"""Monte Carlo verification of the fast excess-risk rate.

Data come from finite-support laws, so the population objective is an
exact finite sum and its minimizer can be computed to solver precision.
Each trial draws ``n`` i.i.d. samples, solves the empirical (or penalized)
problem and records ``P(w_hat) - P(w*)``.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Iterator, List, Optional, Sequence, TextIO

import numpy as np

from . import bounds
from .calculus import check_lemma1, check_optimality_inequality, random_ball_points
from .problem import (
    Dataset,
    L2Squared,
    ParameterError,
    ProblemSpec,
    Regularizer,
    Sample,
    make_regularizer,
    regularizer_range,
)
from .solver import (
    NumericError,
    DykstraError,
    SolverConfig,
    minimize_composite,
    solve_erm,
    solve_penalized_erm_n,
)

log = logging.getLogger(__name__)

TRIAL_COLUMNS = ["n", "d", "trial", "seed", "excess_risk", "solver_residual", "wall_ms", "valid"]
EXCESS_SLACK = 1e-7
MAX_INVALID_FRACTION = 0.05


class ExperimentError(RuntimeError):
    pass


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class FiniteDistribution:
    """Law of ``z = (x, y)`` supported on ``m`` atoms."""

    X: np.ndarray
    y: np.ndarray
    weights: np.ndarray
    y_max: float = 1.0

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if np.any(np.linalg.norm(X, axis=1) > 1 + 1e-12):
            raise ParameterError("atoms must satisfy ||x|| <= 1")
        if np.any(np.abs(y) > self.y_max + 1e-12):
            raise ParameterError(f"atoms must satisfy |y| <= {self.y_max}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-15 * max(1, len(w)):
            raise ParameterError("weights must be a probability vector")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "weights", w)

    @property
    def m(self):
        return len(self.y)

    @property
    def dim(self):
        return self.X.shape[1]

    def as_dataset(self) -> Dataset:
        return Dataset(self.X, self.y, self.weights)

    def sample(self, n: int, rng: np.random.Generator) -> Dataset:
        """``n`` i.i.d. draws, stored as atoms with their counts."""
        idx = rng.choice(self.m, size=n, p=self.weights)
        counts = np.bincount(idx, minlength=self.m)
        keep = counts > 0
        return Dataset(self.X[keep], self.y[keep], counts[keep].astype(float))


def default_wbar(d: int, norm: float = 0.9) -> np.ndarray:
    """Target with linearly decaying magnitudes and alternating signs."""
    j = np.arange(d)
    v = np.where(j % 2 == 0, 1.0, -1.0) * (1.0 - j / d)
    return norm * v / np.linalg.norm(v)


def make_distribution(d: int, m: int = 50, y_max: float = 1.0, wbar=None, noise: float = 0.1,
                      seed: int = 0, radius: float = 1.0, X=None) -> FiniteDistribution:
    """Uniform law over ``m`` synthetic regression atoms.

    Features are uniform on ``[-1, 1]^d`` scaled by ``1/sqrt(d)`` (so
    ``||x|| <= 1``); labels are ``x @ wbar`` plus Gaussian noise, clipped to
    ``[-y_max, y_max]``. Passing ``X`` fixes the atoms instead.
    """
    wbar = default_wbar(d) if wbar is None else np.asarray(wbar, dtype=float)
    if wbar.shape != (d,):
        raise ParameterError(f"wbar must have shape ({d},)")
    if np.linalg.norm(wbar) > radius + 1e-12:
        raise ParameterError("wbar lies outside the domain")
    if not y_max > 0 or np.linalg.norm(wbar) > y_max:
        raise ParameterError(f"y_max={y_max} cannot bound labels for ||wbar||={np.linalg.norm(wbar):.3g}")
    if noise < 0:
        raise ParameterError("noise must be nonnegative")
    rng = np.random.default_rng(seed)
    if X is None:
        X = rng.uniform(-1.0, 1.0, size=(m, d)) / math.sqrt(d)
    else:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        m = X.shape[0]
    eps = rng.standard_normal(m) * noise if noise > 0 else np.zeros(m)
    y = np.clip(X @ wbar + eps, -y_max, y_max)
    return FiniteDistribution(X, y, np.full(m, 1.0 / m), y_max)


class PopulationObjective:
    """Exact ``F(w) = E f(w, z)`` and ``P = F + R`` for a finite-support law."""

    def __init__(self, dist: FiniteDistribution, spec: ProblemSpec):
        self.data = dist.as_dataset()
        self.loss = spec.loss
        self.reg = spec.reg

    def F(self, w) -> float:
        return self.loss.mean_value(w, self.data)

    def grad_F(self, w) -> np.ndarray:
        return self.loss.mean_grad(w, self.data)

    def eval_grad(self, w):
        return self.loss.mean_value_grad(w, self.data)

    def P(self, w) -> float:
        return self.F(w) + self.reg.value(w)

    __call__ = P

    def per_atom_grads(self, w) -> np.ndarray:
        return np.atleast_2d(self.loss.grad(w, self.data.X, self.data.y))


def population_objective(dist: FiniteDistribution, spec: ProblemSpec) -> PopulationObjective:
    return PopulationObjective(dist, spec)


def population_minimizer(dist: FiniteDistribution, spec: ProblemSpec,
                         cfg: SolverConfig = SolverConfig(tol=1e-10), probes: int = 100,
                         seed: int = 0):
    """Minimize the exact population objective and check first-order optimality.

    Returns ``(wstar, pstar)``. Raises :class:`ExperimentError` if the
    optimality inequality fails on ``probes`` random points of the ball.
    """
    pop = population_objective(dist, spec)
    res = minimize_composite(pop.eval_grad, spec.L, spec.reg, spec.domain, cfg)
    if not res.converged:
        raise ExperimentError(f"population solve did not converge (residual {res.residual:.3g})")
    rng = np.random.default_rng(seed)
    pts = random_ball_points(spec.dim, probes, spec.domain.radius, rng)
    report = check_optimality_inequality(pop.grad_F(res.w_hat), spec.reg, res.w_hat, pts)
    if not report.passed:
        raise ExperimentError(f"population minimizer fails the optimality check: {report}")
    return res.w_hat, pop.P(res.w_hat)


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a run.

    ``mode`` is ``"erm"`` or ``"penalized"``; in penalized mode ``g`` is
    added with weight ``1/n``.
    """

    spec: ProblemSpec
    dist_seed: int = 0
    trial_seed: int = 1
    n_grid: Sequence[int] = (128, 256, 512, 1024, 2048, 4096, 8192)
    trials: int = 200
    delta: float = 0.1
    mode: str = "erm"
    g: Regularizer = field(default_factory=lambda: L2Squared(1.0))
    m: int = 50
    noise: float = 0.1
    wbar: Optional[Sequence[float]] = None
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        self.n_grid = tuple(int(n) for n in self.n_grid)
        if any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])) or not self.n_grid:
            raise ParameterError("n_grid must be nonempty and strictly increasing")
        if self.trials < 2:
            raise ParameterError("trials must be >= 2")
        if self.mode not in ("erm", "penalized"):
            raise ParameterError(f"unknown mode {self.mode!r}")

    def distribution(self) -> FiniteDistribution:
        return make_distribution(self.spec.dim, self.m, self.spec.y_max, self.wbar, self.noise,
                                 self.dist_seed, self.spec.domain.radius)

    @property
    def B(self) -> Optional[float]:
        if self.mode != "penalized":
            return None
        return regularizer_range(self.g, self.spec.domain.radius)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "dist_seed": self.dist_seed,
            "trial_seed": self.trial_seed,
            "n_grid": list(self.n_grid),
            "trials": self.trials,
            "delta": self.delta,
            "mode": self.mode,
            "g": {"kind": self.g.kind, "lambda": float(self.g.lam)},
            "m": self.m,
            "noise": self.noise,
            "wbar": None if self.wbar is None else [float(v) for v in self.wbar],
            "solver": {"tol": self.solver.tol, "max_iters": self.solver.max_iters},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        spec = ProblemSpec.from_dict(doc.pop("spec"))
        g = doc.pop("g", None)
        solver = doc.pop("solver", None) or {}
        kwargs = {k: v for k, v in doc.items() if k in cls.__dataclass_fields__}
        if g is not None:
            kwargs["g"] = make_regularizer(g["kind"], g.get("lambda", 0.0))
        return cls(spec=spec, solver=SolverConfig(**solver), **kwargs)


@dataclass
class TrialRecord:
    n: int
    d: int
    trial: int
    seed: int
    excess_risk: float
    solver_residual: float
    wall_ms: float
    valid: bool

    def row(self, timing: bool = False) -> list:
        return [self.n, self.d, self.trial, self.seed, repr(float(self.excess_risk)),
                repr(float(self.solver_residual)),
                f"{self.wall_ms:.3f}" if timing else "", int(self.valid)]


def trial_seed_for(trial_seed: int, n: int, trial_index: int) -> int:
    """Per-trial seed, independent of execution order."""
    return int(np.random.SeedSequence([trial_seed, n, trial_index]).generate_state(1, np.uint32)[0])


class _Trial:
    def __init__(self, cfg: ExperimentConfig, dist: FiniteDistribution, pop: PopulationObjective,
                 pstar: float):
        self.cfg, self.dist, self.pop, self.pstar = cfg, dist, pop, pstar

    def __call__(self, key) -> TrialRecord:
        n, k = key
        cfg = self.cfg
        seed = trial_seed_for(cfg.trial_seed, n, k)
        rng = np.random.default_rng(seed)
        data = self.dist.sample(n, rng)
        t0 = time.perf_counter()
        try:
            if cfg.mode == "erm":
                res = solve_erm(cfg.spec, data, cfg.solver)
            else:
                res = solve_penalized_erm_n(cfg.spec, data, cfg.g, n, cfg.solver)
        except (NumericError, DykstraError) as exc:
            log.warning("trial n=%d k=%d failed: %s", n, k, exc)
            return TrialRecord(n, cfg.spec.dim, k, seed, math.nan, math.nan,
                               1e3 * (time.perf_counter() - t0), False)
        wall = 1e3 * (time.perf_counter() - t0)
        excess = self.pop.P(res.w_hat) - self.pstar
        valid = bool(res.converged and excess >= -EXCESS_SLACK)
        return TrialRecord(n, cfg.spec.dim, k, seed, excess, res.residual, wall, valid)


def lemma1_spot_check(spec: ProblemSpec, dist: FiniteDistribution, count: int = 100,
                      seed: int = 0):
    """Quadratic lower bound on random ``(w, w', atom)`` triples with the spec's sigma."""
    rng = np.random.default_rng(seed)
    R = spec.domain.radius
    W = random_ball_points(spec.dim, count, R, rng)
    W2 = random_ball_points(spec.dim, count, R, rng)
    idx = rng.integers(0, dist.m, size=count)
    triples = [(W[i], W2[i], Sample(dist.X[j], dist.y[j])) for i, j in enumerate(idx)]
    return check_lemma1(spec.loss, spec.constants, triples)


def iter_trials(cfg: ExperimentConfig, threads: int = 1) -> Iterator[TrialRecord]:
    """Yield trial records in ``(n, trial)`` order.

    Raises :class:`ExperimentError` before any trial if the spec's constants
    fail the quadratic lower-bound spot check on the distribution's atoms.
    """
    dist = cfg.distribution()
    report = lemma1_spot_check(cfg.spec, dist, seed=cfg.dist_seed)
    if not report.passed:
        raise ExperimentError(f"constants fail the quadratic lower bound on this law: {report}")
    pop = population_objective(dist, cfg.spec)
    _, pstar = population_minimizer(dist, cfg.spec)
    work = _Trial(cfg, dist, pop, pstar)
    keys = [(n, k) for n in cfg.n_grid for k in range(cfg.trials)]
    if threads <= 1:
        yield from map(work, keys)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            yield from pool.map(work, keys)


def run_trials(cfg: ExperimentConfig, out: Optional[TextIO] = None, threads: int = 1,
               timing: bool = False) -> List[TrialRecord]:
    """Run every ``(n, trial)`` of the config, streaming CSV rows to ``out``.

    The CSV leaves ``wall_ms`` empty unless ``timing`` is set, so runs with
    equal seeds produce byte-identical files.
    """
    writer = None
    if out is not None:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(TRIAL_COLUMNS)
    records = []
    for rec in iter_trials(cfg, threads):
        records.append(rec)
        if writer is not None:
            writer.writerow(rec.row(timing))
    bad = sum(not r.valid for r in records)
    if bad > MAX_INVALID_FRACTION * len(records):
        raise ExperimentError(f"{bad} of {len(records)} trials invalid")
    return records


def records_to_csv(records: Iterable[TrialRecord], timing: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRIAL_COLUMNS)
    for r in records:
        w.writerow(r.row(timing))
    return buf.getvalue()


def read_trials_csv(fh: TextIO) -> List[TrialRecord]:
    out = []
    for row in csv.DictReader(fh):
        out.append(TrialRecord(
            n=int(row["n"]), d=int(row["d"]), trial=int(row["trial"]), seed=int(row["seed"]),
            excess_risk=float(row["excess_risk"]), solver_residual=float(row["solver_residual"]),
            wall_ms=float(row["wall_ms"]) if row.get("wall_ms") else math.nan,
            valid=bool(int(row.get("valid", 1))),
        ))
    return out


# --------------------------------------------------------------------------
# statistics


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float
    statistic: str

    def to_dict(self):
        return {"slope": self.slope, "intercept": self.intercept, "r2": self.r2,
                "statistic": self.statistic}


def empirical_quantile(values, level: float) -> float:
    """Smallest value whose empirical CDF reaches ``level``."""
    return float(np.quantile(np.asarray(values, dtype=float), min(max(level, 0.0), 1.0),
                             method="inverted_cdf"))


def _by_n(records: Iterable[TrialRecord]) -> dict:
    groups = {}
    for r in records:
        if r.valid:
            groups.setdefault(r.n, []).append(r.excess_risk)
    return {n: np.asarray(v) for n, v in sorted(groups.items())}


def _statistic(values, statistic: str) -> float:
    if statistic == "median":
        return float(np.median(values))
    if statistic == "mean":
        return float(np.mean(values))
    if statistic.startswith("quantile:"):
        return empirical_quantile(values, float(statistic.split(":", 1)[1]))
    raise ParameterError(f"unknown statistic {statistic!r}")


def fit_loglog(ns, values) -> tuple:
    """OLS of ``log(values)`` on ``log(ns)``; returns ``(slope, intercept, r2)``."""
    ns = np.asarray(ns, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(np.unique(ns)) < 3:
        raise DataError("rate fitting needs at least three distinct n")
    if np.any(values <= 0):
        raise DataError("statistic is nonpositive for some n (below the solver noise floor); drop those n")
    x, y = np.log(ns), np.log(values)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def fit_rate(records: Iterable[TrialRecord], statistic: str = "median") -> RateFit:
    """Log-log slope of a per-``n`` statistic of the excess risk.

    ``statistic`` is ``"median"``, ``"mean"`` or ``"quantile:<level>"``.
    """
    groups = _by_n(records)
    ns = list(groups)
    vals = [_statistic(groups[n], statistic) for n in ns]
    return RateFit(*fit_loglog(ns, vals), statistic=statistic)


def median_standard_error(values, n_boot: int = 2000, seed: int = 0) -> float:
    """Bootstrap standard error of the sample median."""
    values = np.asarray(values, dtype=float)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(values), size=(n_boot, len(values)))
    return float(np.std(np.median(values[idx], axis=1), ddof=1))


def summarize(records: Sequence[TrialRecord], delta: float, consts, B: Optional[float] = None,
              honest: bool = False) -> dict:
    """Per-``n`` statistics with the explicit bounds and violation flags.

    ``quantile`` is the empirical ``(1 - delta)``-quantile. The bound is
    compared against the empirical quantile at the bound's own confidence
    level (``1 - 2 delta`` as printed, ``1 - delta`` with ``honest``).
    """
    groups = _by_n(records)
    rows = []
    for n, vals in groups.items():
        row = {
            "n": n,
            "count": int(len(vals)),
            "mean": float(np.mean(vals)),
            "median": float(np.median(vals)),
            "quantile": empirical_quantile(vals, 1.0 - delta),
        }
        if 0 < delta < 1:
            thm1, note = bounds.theorem1_bound(consts.L, consts.G, consts.R, consts.d,
                                               consts.sigma, n, delta, honest)
            level = 1.0 - (2.0 * delta if note is bounds.Confidence.ONE_MINUS_TWO_DELTA else delta)
            row["bound_level"] = level
            row["bound_quantile"] = empirical_quantile(vals, level)
            row["thm1"] = thm1
            row["confidence_note"] = note.value
            reference = thm1
            if B is not None:
                row["thm2"] = thm1 + B / n
                reference = row["thm2"]
            row["violation"] = bool(row["bound_quantile"] > reference)
        rows.append(row)
    summary = {
        "delta": delta,
        "per_n": rows,
        "violations": [r["n"] for r in rows if r.get("violation")],
        "invalid_trials": sum(not r.valid for r in records),
        "max_solver_residual": max((r.solver_residual for r in records if r.valid), default=math.nan),
    }
    try:
        summary["rate_fit"] = fit_rate(records, "median").to_dict()
    except DataError as exc:
        summary["rate_fit"] = None
        summary["rate_fit_skipped"] = str(exc)
    return summary
