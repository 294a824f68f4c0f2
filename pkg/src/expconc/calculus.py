"""Sampled checks of the pointwise inequalities behind the fast-rate analysis.

Exp-concavity of a twice-differentiable loss is the matrix inequality
``hess f >= beta * grad f grad f'`` for every ``w`` and ``z``. That is not
finitely checkable, so :func:`expconcavity_check` evaluates it on a
deterministic low-discrepancy sample (a certification heuristic, not a
proof) and reports how many points it looked at.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .problem import CapabilityError, Constants, Domain, Loss, Regularizer, Sample, UsageError

PSD_TOL = 1e-8
LEMMA1_TOL = 1e-9
OPTIMALITY_TOL = 1e-7


class Status(str, enum.Enum):
    CERTIFIED = "Certified"
    REFUTED = "Refuted"


@dataclass(frozen=True)
class SamplingPlan:
    """Where the exp-concavity inequality is evaluated.

    ``n_w`` points of the domain: the ``2d`` axis points ``+-R e_i``, then
    scrambled-Sobol interior points and the same number of points rescaled
    to the boundary. With ``box=(lo, hi)`` the ``w`` points instead cover
    that box (its corners included). ``n_z`` samples ``z = (x, y)`` with
    ``||x|| <= 1`` and ``|y| <= y_max``, half of them with ``|y| = y_max``.
    """

    n_w: int = 512
    n_z: int = 64
    seed: int = 0
    y_max: float = 1.0
    box: Optional[Tuple[float, float]] = None

    def w_points(self, domain: Domain) -> np.ndarray:
        d, R = domain.dim, domain.radius
        if self.box is not None:
            lo, hi = self.box
            corners = np.array(np.meshgrid(*[[lo, hi]] * d)).reshape(d, -1).T if d <= 10 else np.empty((0, d))
            rest = max(self.n_w - len(corners), 1)
            u = _sobol(d, rest, self.seed)
            return np.vstack([corners, lo + (hi - lo) * u])
        axes = np.vstack([R * np.eye(d), -R * np.eye(d)])
        rest = max(self.n_w - 2 * d, 2)
        inner = _ball_points(d, rest - rest // 2, self.seed) * R
        outer = _ball_points(d, rest // 2, self.seed + 1, boundary=True) * R
        return np.vstack([axes, inner, outer])[: max(self.n_w, 2 * d + 2)]

    def z_points(self, d: int) -> Tuple[np.ndarray, np.ndarray]:
        n = max(self.n_z, 1)
        X = _ball_points(d, n, self.seed + 2, boundary=False)
        X[: n // 4] = _ball_points(d, n // 4, self.seed + 3, boundary=True)
        y = (2.0 * _sobol(1, n, self.seed + 4)[:, 0] - 1.0) * self.y_max
        y[: n // 2: 2] = self.y_max
        y[1: n // 2: 2] = -self.y_max
        return X, y


def _sobol(d: int, n: int, seed: int) -> np.ndarray:
    if n <= 0:
        return np.empty((0, d))
    m = max(int(math.ceil(math.log2(n))), 0)
    return qmc.Sobol(d, scramble=True, seed=seed).random_base2(m)[:n]


def _ball_points(d: int, n: int, seed: int, boundary: bool = False) -> np.ndarray:
    """Low-discrepancy points in (or on) the unit ball of ``R^d``."""
    if n <= 0:
        return np.empty((0, d))
    u = np.clip(_sobol(d + 1, n, seed), 1e-12, 1 - 1e-12)

    g = ndtri(u[:, :d])
    g /= np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
    if boundary:
        return g
    return g * (u[:, d] ** (1.0 / d))[:, None]


@dataclass(frozen=True)
class Witness:
    w: np.ndarray
    z: Sample
    direction: np.ndarray
    quad_form: float

    def to_dict(self):
        return {"w": self.w.tolist(), "z": {"x": self.z.x.tolist(), "y": self.z.y},
                "direction": self.direction.tolist(), "quad_form": self.quad_form}


@dataclass(frozen=True)
class Certificate:
    beta: float
    status: Status
    witness: Optional[Witness]
    points_checked: int
    min_eig_seen: float
    tolerance: float = PSD_TOL
    method: str = "sampled (heuristic, not a proof)"

    @property
    def certified(self) -> bool:
        return self.status is Status.CERTIFIED

    def to_dict(self):
        return {
            "beta": self.beta,
            "status": self.status.value,
            "witness": None if self.witness is None else self.witness.to_dict(),
            "points_checked": self.points_checked,
            "min_eig_seen": self.min_eig_seen,
            "tolerance": self.tolerance,
            "method": self.method,
        }


class _PointCache:
    """Hessians and gradients of a loss on a plan, reused across beta values."""

    def __init__(self, loss: Loss, domain: Domain, plan: SamplingPlan):
        if not loss.has_hessian:
            raise CapabilityError(f"{loss!r} has no Hessian")
        self.W = plan.w_points(domain)
        self.X, self.y = plan.z_points(domain.dim)
        self.H = []
        self.g = []
        for w in self.W:
            self.H.append(np.asarray(loss.hess(w, self.X, self.y), dtype=float).reshape(len(self.y), domain.dim, domain.dim))
            self.g.append(np.asarray(loss.grad(w, self.X, self.y), dtype=float).reshape(len(self.y), domain.dim))

    @property
    def count(self):
        return len(self.W) * len(self.y)

    def scale(self, beta: float) -> float:
        return max(float(np.abs(H).max()) + beta * float((g * g).sum(axis=1).max())
                   for H, g in zip(self.H, self.g))

    def certify(self, beta: float, tol: float = PSD_TOL) -> Certificate:
        best = (np.inf, None)
        for i, (H, g) in enumerate(zip(self.H, self.g)):
            M = H - beta * g[:, :, None] * g[:, None, :]
            M = 0.5 * (M + np.swapaxes(M, 1, 2))
            vals, vecs = np.linalg.eigh(M)
            j = int(np.argmin(vals[:, 0]))
            if vals[j, 0] < best[0]:
                best = (float(vals[j, 0]), (i, j, vecs[j, :, 0]))
        min_eig, (i, j, v) = best
        if min_eig >= -tol:
            return Certificate(beta, Status.CERTIFIED, None, self.count, min_eig, tol)
        k = int(np.argmax(np.abs(v)))
        v = v * np.sign(v[k])
        z = Sample(self.X[j], self.y[j])
        M = self.H[i][j] - beta * np.outer(self.g[i][j], self.g[i][j])
        witness = Witness(self.W[i].copy(), z, v, float(v @ M @ v))
        return Certificate(beta, Status.REFUTED, witness, self.count, min_eig, tol)


def expconcavity_check(loss: Loss, beta: float, domain: Domain,
                       plan: SamplingPlan = SamplingPlan()) -> Certificate:
    """Test ``hess f - beta grad f grad f' >= -1e-8`` on the plan's points.

    A refutation carries the worst point and the eigen-direction of the
    most negative eigenvalue.
    """
    if not beta > 0:
        raise UsageError("beta must be positive")
    return _PointCache(loss, domain, plan).certify(beta)


def max_beta_estimate(loss: Loss, domain: Domain, plan: SamplingPlan = SamplingPlan(),
                      lo: float = 1e-9, hi: float = 1e3, iters: int = 40) -> float:
    """Largest ``beta`` in ``[lo, hi]`` that the sampled check certifies.

    Bisection runs on ``log(beta)``; returns 0 if ``lo`` is already refuted.
    The PSD tolerance here shrinks with ``beta`` (``1e-8 * min(1, beta)``
    plus a rounding floor), otherwise a fixed ``-1e-8`` would certify every
    ``beta`` below ``1e-8`` for any loss.
    """
    cache = _PointCache(loss, domain, plan)

    def ok(beta):
        tol = PSD_TOL * min(1.0, beta) + 64 * np.finfo(float).eps * cache.scale(beta)
        return cache.certify(beta, tol).certified

    if not ok(lo):
        return 0.0
    if ok(hi):
        return hi
    a, b = math.log(lo), math.log(hi)
    for _ in range(iters):
        mid = 0.5 * (a + b)
        if ok(math.exp(mid)):
            a = mid
        else:
            b = mid
    return math.exp(a)


@dataclass(frozen=True)
class ResidualReport:
    min_residual: float
    argmin: int
    count: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.min_residual >= -self.tolerance

    def to_dict(self):
        return {"min_residual": self.min_residual, "argmin": self.argmin, "count": self.count,
                "tolerance": self.tolerance, "passed": self.passed}


def _report(residuals: Sequence[float], tol: float) -> ResidualReport:
    r = np.asarray(residuals, dtype=float)
    if r.size == 0:
        return ResidualReport(math.inf, -1, 0, tol)
    k = int(np.argmin(r))
    return ResidualReport(float(r[k]), k, int(r.size), tol)


def lemma1_residual(loss: Loss, sigma: float, w, w_prime, z: Sample) -> float:
    """``f(w) - [f(w') + <w - w', g'> + (sigma/2) <w - w', g'>^2]`` with ``g' = grad f(w')``."""
    w = np.asarray(w, dtype=float)
    w_prime = np.asarray(w_prime, dtype=float)
    g = np.asarray(loss.grad(w_prime, z.x, z.y), dtype=float)
    t = float((w - w_prime) @ g)
    return float(loss.value(w, z.x, z.y)) - (float(loss.value(w_prime, z.x, z.y)) + t + 0.5 * sigma * t * t)


def check_lemma1(loss: Loss, consts: Constants, triples: Iterable) -> ResidualReport:
    """Quadratic lower bound of an exp-concave loss on ``(w, w', z)`` triples."""
    res = []
    for w, w_prime, z in triples:
        for u in (w, w_prime):
            if np.linalg.norm(u) > consts.R + 1e-12:
                raise UsageError(f"point {np.asarray(u).tolist()} lies outside the radius-{consts.R} ball")
        res.append(lemma1_residual(loss, consts.sigma, w, w_prime, z))
    return _report(res, LEMMA1_TOL)


def check_optimality_inequality(popF_grad_at_wstar, reg: Regularizer, wstar,
                                probes: Iterable) -> ResidualReport:
    """``<w - w*, grad F(w*)> - (R(w*) - R(w))`` over the probes; must be >= -1e-7."""
    gF = np.asarray(popF_grad_at_wstar, dtype=float)
    wstar = np.asarray(wstar, dtype=float)
    r_star = reg.value(wstar)
    res = [float((np.asarray(w) - wstar) @ gF) - (r_star - reg.value(w)) for w in probes]
    return _report(res, OPTIMALITY_TOL)


def random_ball_points(d: int, n: int, R: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform points in the radius-``R`` ball."""
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * (R * rng.random(n) ** (1.0 / d))[:, None]
