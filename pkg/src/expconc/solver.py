"""Proximal gradient minimization over a Euclidean ball.

The feasible set enters through the proximal map of ``reg + indicator(ball)``
(:func:`combined_prox`), so every iterate is feasible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .problem import (
    Dataset,
    Domain,
    ProblemSpec,
    Regularizer,
    UsageError,
    Zero,
    add_regularizers,
    as_dataset,
)

log = logging.getLogger(__name__)

ARMIJO = 1e-4
GROW_AFTER = 10


class NumericError(ArithmeticError):
    """Non-finite objective or gradient; ``iterate`` holds the offending point."""

    def __init__(self, message, iterate=None):
        super().__init__(message)
        self.iterate = iterate


class DykstraError(RuntimeError):
    def __init__(self, message, iterate=None):
        super().__init__(message)
        self.iterate = iterate


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-8
    max_iters: int = 100_000
    step_init: Optional[float] = None
    backtrack_factor: float = 0.5
    dykstra_tol: float = 1e-10
    dykstra_max: int = 10_000

    def __post_init__(self):
        if not self.tol > 0:
            raise UsageError("tol must be positive")
        if not 0 < self.backtrack_factor < 1:
            raise UsageError("backtrack_factor must lie in (0, 1)")


@dataclass
class SolverResult:
    w_hat: np.ndarray
    objective: float
    residual: float
    iters: int
    converged: bool
    history: List[float] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "w_hat": [float(v) for v in self.w_hat],
            "objective": float(self.objective),
            "residual": float(self.residual),
            "iters": int(self.iters),
            "converged": bool(self.converged),
        }


def project_ball(v, R: float) -> np.ndarray:
    v = np.array(v, dtype=float)
    nrm = float(np.linalg.norm(v))
    if nrm <= R:
        return v
    return v * (R / nrm)


def prox(reg: Regularizer, v, eta: float) -> np.ndarray:
    """``argmin_u ||u - v||^2 / (2 eta) + reg(u)``."""
    if not eta > 0:
        raise UsageError("eta must be positive")
    return reg.prox(np.asarray(v, dtype=float), eta)


def dykstra(prox_a: Callable, prox_b: Callable, v, tol: float = 1e-10,
            max_iter: int = 10_000) -> np.ndarray:
    """Dykstra's splitting for the proximal map of a sum of two convex functions.

    ``prox_a`` and ``prox_b`` are the individual maps at the same step. The
    iteration converges to ``prox_{a+b}(v)``, unlike plain alternation.
    """
    x = np.array(v, dtype=float)
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    for _ in range(max_iter):
        y = prox_a(x + p)
        p = x + p - y
        x_new = prox_b(y + q)
        q = y + q - x_new
        if np.linalg.norm(x_new - x) <= tol:
            return x_new
        x = x_new
    raise DykstraError(f"Dykstra did not converge in {max_iter} iterations", iterate=x)


def combined_prox(reg: Regularizer, domain: Domain, v, eta: float,
                  cfg: SolverConfig = SolverConfig(), method: str = "auto") -> np.ndarray:
    """Proximal map of ``reg + indicator(||u|| <= R)``.

    ``method="auto"`` uses the exact closed forms for the built-in
    regularizers and Dykstra otherwise; ``method="dykstra"`` forces the
    iterative route.
    """
    if not eta > 0:
        raise UsageError("eta must be positive")
    R = domain.radius
    v = np.asarray(v, dtype=float)
    if method == "auto":
        # prox then radial shrink is exact when the regularizer's
        # subdifferential is invariant under positive scaling (up to a
        # radial term), as for L1, squared L2 and their sum.
        if reg.ball_compatible:
            return project_ball(reg.prox(v, eta), R)
    elif method != "dykstra":
        raise UsageError(f"unknown prox method {method!r}")
    if isinstance(reg, Zero):
        return project_ball(v, R)
    return dykstra(lambda u: reg.prox(u, eta), lambda u: project_ball(u, R), v,
                   tol=cfg.dykstra_tol, max_iter=cfg.dykstra_max)


def minimize_composite(smooth_eval_grad: Callable, L_hint: float, reg: Regularizer,
                       domain: Domain, cfg: SolverConfig = SolverConfig(),
                       w0=None) -> SolverResult:
    """Backtracking proximal gradient for ``F(w) + reg(w)`` over the ball.

    ``smooth_eval_grad(w)`` returns ``(F(w), grad F(w))``. The step starts
    at ``cfg.step_init`` (``1 / L_hint`` by default), shrinks by
    ``backtrack_factor`` until the sufficient-decrease test passes and
    doubles after ten consecutive accepted steps. Stops when the
    gradient-mapping norm falls to ``cfg.tol``.
    """
    w = np.zeros(domain.dim) if w0 is None else np.array(w0, dtype=float)
    if not domain.contains(w, slack=1e-9):
        raise UsageError("w0 lies outside the domain")
    w = project_ball(w, domain.radius)
    eta = cfg.step_init if cfg.step_init is not None else 1.0 / L_hint
    eta_floor = 1e-12 * eta

    def evaluate(u):
        f, g = smooth_eval_grad(u)
        f = float(f)
        g = np.asarray(g, dtype=float)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite objective or gradient at w={u.tolist()}", iterate=u)
        return f, g

    f, g = evaluate(w)
    obj = f + reg.value(w)
    history = [obj]
    residual = np.inf
    streak = 0
    it = 0
    for it in range(1, cfg.max_iters + 1):
        while True:
            w_new = combined_prox(reg, domain, w - eta * g, eta, cfg)
            step = w_new - w
            f_new, g_new = evaluate(w_new)
            # sufficient decrease of the smooth part along the prox step
            sq = float(step @ step)
            if f_new <= f + g @ step + (1.0 - ARMIJO) * sq / (2.0 * eta) + 1e-15 * abs(f) \
                    or eta <= eta_floor:
                break
            eta *= cfg.backtrack_factor
            streak = 0
        residual = np.sqrt(sq) / eta
        w, f, g = w_new, f_new, g_new
        obj = f + reg.value(w)
        history.append(obj)
        if residual <= cfg.tol:
            return SolverResult(w, obj, residual, it, True, history)
        streak += 1
        if streak >= GROW_AFTER:
            eta *= 2.0
            streak = 0
    log.warning("proximal gradient stopped at max_iters=%d (residual %.3g)", cfg.max_iters, residual)
    return SolverResult(w, obj, float(residual), it, False, history)


def empirical_eval_grad(spec: ProblemSpec, data: Dataset):
    loss = spec.loss

    def fn(w):
        return loss.mean_value_grad(w, data)

    return fn


def solve_erm(spec: ProblemSpec, dataset, cfg: SolverConfig = SolverConfig(), w0=None) -> SolverResult:
    """Minimize the empirical composite objective over the ball, starting from 0."""
    data = as_dataset(dataset)
    if data.dim != spec.dim:
        raise UsageError(f"dataset dimension {data.dim} differs from problem dimension {spec.dim}")
    return minimize_composite(empirical_eval_grad(spec, data), spec.L, spec.reg, spec.domain, cfg, w0)


def solve_penalized_erm(spec: ProblemSpec, dataset, g: Regularizer,
                        cfg: SolverConfig = SolverConfig(), w0=None) -> SolverResult:
    """Minimize empirical loss plus ``spec.reg`` plus ``g / n``.

    ``n`` is the number of stored samples; for a weighted dataset pass
    ``n`` through :func:`solve_penalized_erm_n`.
    """
    data = as_dataset(dataset)
    return solve_penalized_erm_n(spec, data, g, len(data), cfg, w0)


def solve_penalized_erm_n(spec: ProblemSpec, data: Dataset, g: Regularizer, n: int,
                          cfg: SolverConfig = SolverConfig(), w0=None) -> SolverResult:
    reg = add_regularizers(spec.reg, g.scaled(1.0 / n))
    return minimize_composite(empirical_eval_grad(spec, data), spec.L, reg, spec.domain, cfg, w0)
