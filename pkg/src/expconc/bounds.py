"""Closed-form high-probability bounds for regularized exp-concave ERM.

All logarithms are natural. ``delta`` is a failure probability in (0, 1).
The curvature constant is called ``sigma``; the second moment appearing in
the vector Bernstein inequality is called ``variance``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .problem import ParameterError


class Confidence(str, enum.Enum):
    ONE_MINUS_DELTA = "1-delta"
    ONE_MINUS_TWO_DELTA = "1-2delta"


def _check_delta(delta):
    if not 0 < delta < 1:
        raise ParameterError(f"delta must lie in (0, 1), got {delta}")


def covering_number_bound(R: float, eps: float, d: int) -> float:
    """Log of the ball covering bound ``(6R/eps)^d``, clamped at 0."""
    if not eps > 0 or not R > 0:
        raise ParameterError("R and eps must be positive")
    return max(0.0, d * math.log(6.0 * R / eps))


def c_epsilon(delta: float, d: int, R: float, eps: float) -> float:
    """Union-bound constant ``4 (log(2/delta) + log N(eps))``."""
    _check_delta(delta)
    return 4.0 * (math.log(2.0 / delta) + covering_number_bound(R, eps, d))


def vector_bernstein(M: float, variance: float, m: int, delta: float) -> float:
    """Deviation of an average of ``m`` i.i.d. bounded Hilbert-space vectors.

    ``M`` bounds the norm almost surely and ``variance`` is ``E ||xi||^2``.
    """
    if M < 0 or variance < 0 or m < 1:
        raise ParameterError("need M >= 0, variance >= 0, m >= 1")
    _check_delta(delta)
    lg = math.log(2.0 / delta)
    return 2.0 * M * lg / m + math.sqrt(2.0 * variance * lg / m)


def grad_concentration_bound(G: float, alpha: float, d: int, sigma: float, n: int,
                             delta: float) -> float:
    """Dual H-norm deviation of the empirical gradient at the population optimum."""
    if min(G, alpha, sigma) <= 0 or d < 1 or n < 1:
        raise ParameterError("G, alpha, sigma must be positive; d, n >= 1")
    _check_delta(delta)
    lg = math.log(2.0 / delta)
    return 2.0 * G * lg / n + math.sqrt(2.0 * alpha * d * lg / (n * sigma))


def net_deviation_bound(L: float, G: float, delta: float, d: int, R: float, eps: float,
                        n: int, dist: float, excess: float) -> float:
    """Uniform bound on the centered gradient-difference deviation over the ball.

    ``dist`` is ``||w - w*||`` and ``excess`` is ``P(w) - P(w*)``.
    """
    if dist < 0 or excess < 0:
        raise ParameterError("dist and excess must be nonnegative")
    C = c_epsilon(delta, d, R, eps)
    return (L * C * dist / n + L * C * eps / n + math.sqrt(L * C * excess / n)
            + math.sqrt(L * G * C * eps / n) + 2.0 * L * eps)


def theorem1_terms(L: float, G: float, R: float, d: int, sigma: float, n: int,
                   delta: float) -> list:
    """The seven terms of the explicit excess-risk bound.

    They correspond to the net scale ``eps = 1/n`` and ``alpha = log(2/delta)/n``;
    the covering term uses ``log(2/delta) + d log(6Rn)``.
    """
    if n < 1:
        raise ParameterError("n must be >= 1")
    _check_delta(delta)
    lg = math.log(2.0 / delta)
    cov = lg + d * math.log(6.0 * R * n)
    return [
        64.0 * L * R ** 2 * cov / n,
        8.0 * L * R * cov / n ** 2,
        12.0 * d * lg / (n * sigma),
        24.0 * G ** 2 * lg / n,
        G / (2.0 * n),
        8.0 * L * R / n,
        4.0 * R ** 2 * lg / (3.0 * n),
    ]


def theorem1_bound(L: float, G: float, R: float, d: int, sigma: float, n: int,
                   delta: float, honest: bool = False):
    """Explicit high-probability bound on ``P(w_hat) - P(w*)``.

    The plain sum holds with probability ``1 - 2 delta``. With
    ``honest=True`` it is evaluated at ``delta / 2`` so that the returned
    value holds with probability ``1 - delta``.

    Returns ``(value, Confidence)``.
    """
    if honest:
        return math.fsum(theorem1_terms(L, G, R, d, sigma, n, delta / 2.0)), Confidence.ONE_MINUS_DELTA
    return math.fsum(theorem1_terms(L, G, R, d, sigma, n, delta)), Confidence.ONE_MINUS_TWO_DELTA


def theorem2_bound(L: float, G: float, R: float, d: int, sigma: float, n: int,
                   delta: float, B: float, honest: bool = False):
    """Bound for the penalized minimizer: the excess-risk bound plus ``B / n``."""
    if B < 0:
        raise ParameterError("B must be nonnegative")
    value, note = theorem1_bound(L, G, R, d, sigma, n, delta, honest)
    return value + B / n, note


@dataclass(frozen=True)
class BoundReport:
    n: int
    d: int
    delta: float
    sigma: float
    eps: float
    alpha: float
    covering_log: float
    c_eps: float
    lemma4: float
    lemma5: float
    thm1: float
    thm2: Optional[float]
    confidence_note: Confidence

    def to_dict(self):
        out = asdict(self)
        out["confidence_note"] = self.confidence_note.value
        return out


def bound_report(consts, n: int, delta: float, eps: Optional[float] = None,
                 alpha: Optional[float] = None, B: Optional[float] = None,
                 dist: Optional[float] = None, excess: float = 0.0,
                 honest: bool = False) -> BoundReport:
    """Evaluate every bound at ``(n, d, delta)`` for the given :class:`Constants`.

    ``eps`` and ``alpha`` default to the choices made in the excess-risk
    proof (``1/n`` and ``log(2/delta)/n``). The net deviation is evaluated
    at ``dist`` (default: the diameter ``2R``) and ``excess``.
    """
    c = consts
    eps = 1.0 / n if eps is None else eps
    alpha = math.log(2.0 / delta) / n if alpha is None else alpha
    dist = 2.0 * c.R if dist is None else dist
    thm1, note = theorem1_bound(c.L, c.G, c.R, c.d, c.sigma, n, delta, honest)
    thm2 = None if B is None else theorem2_bound(c.L, c.G, c.R, c.d, c.sigma, n, delta, B, honest)[0]
    return BoundReport(
        n=n, d=c.d, delta=delta, sigma=c.sigma, eps=eps, alpha=alpha,
        covering_log=covering_number_bound(c.R, eps, c.d),
        c_eps=c_epsilon(delta, c.d, c.R, eps),
        lemma4=grad_concentration_bound(c.G, alpha, c.d, c.sigma, n, delta),
        lemma5=net_deviation_bound(c.L, c.G, delta, c.d, c.R, eps, n, dist, excess),
        thm1=thm1, thm2=thm2, confidence_note=note,
    )


class HNorm:
    """``H = I + (sigma / alpha) M`` with ``M`` a gradient second-moment matrix.

    ``norm(v)`` is ``sqrt(v' H v)`` and ``dual_norm(u)`` is ``sqrt(u' H^-1 u)``.
    """

    def __init__(self, M: np.ndarray, sigma: float, alpha: float, n_samples: int = 0):
        if not alpha > 0:
            raise ParameterError("alpha must be positive")
        M = np.asarray(M, dtype=float)
        self.M = 0.5 * (M + M.T)
        self.n_samples = n_samples
        self.sigma = sigma
        self.alpha = alpha
        self.H = np.eye(M.shape[0]) + (sigma / alpha) * self.M
        self._chol = np.linalg.cholesky(self.H)

    def norm(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return float(np.sqrt(v @ self.H @ v))

    def dual_norm(self, u) -> float:
        z = np.linalg.solve(self._chol, np.asarray(u, dtype=float))
        return float(np.sqrt(z @ z))


def second_moment(grads: Sequence, weights=None) -> np.ndarray:
    G = np.atleast_2d(np.asarray(grads, dtype=float))
    if G.shape[0] == 0:
        raise ParameterError("need at least one gradient")
    if weights is None:
        return G.T @ G / G.shape[0]
    w = np.asarray(weights, dtype=float)
    return (G * w[:, None]).T @ G / w.sum()


def empirical_H(grads_at_wstar: Sequence, sigma: float, alpha: float, weights=None) -> HNorm:
    """H-norm built from gradients at the population optimum.

    ``weights`` turns the mean into an exact expectation for a
    finite-support law.
    """
    M = second_moment(grads_at_wstar, weights)
    return HNorm(M, sigma, alpha, n_samples=len(np.atleast_2d(grads_at_wstar)))
