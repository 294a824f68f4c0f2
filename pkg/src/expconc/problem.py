"""Losses, regularizers, the ball domain and the derived curvature constants.

Losses are evaluated in batch form: ``X`` is an ``(n, d)`` array of
features and ``y`` an ``(n,)`` array of labels. A single sample may be
passed as a 1-d ``x`` and scalar ``y``; results are then squeezed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


class ParameterError(ValueError):
    """Invalid numeric parameter (nonpositive constant, bad radius, ...)."""


class UsageError(ValueError):
    """Operation called with inputs violating its preconditions."""


class CapabilityError(TypeError):
    """The object lacks an optional capability (Hessian, prox)."""


@dataclass(frozen=True)
class Domain:
    """Euclidean ball ``{w : ||w||_2 <= radius}`` in ``R^dim``."""

    radius: float
    dim: int

    def __post_init__(self):
        if not self.radius > 0:
            raise ParameterError(f"radius must be positive, got {self.radius}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ParameterError(f"dim must be a positive integer, got {self.dim}")

    def contains(self, w, slack: float = 1e-12) -> bool:
        w = np.asarray(w, dtype=float)
        return w.shape == (self.dim,) and float(np.linalg.norm(w)) <= self.radius + slack


@dataclass(frozen=True)
class Sample:
    x: np.ndarray
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "y", float(self.y))


@dataclass(frozen=True)
class Dataset:
    """Weighted collection of samples.

    Unit weights (``weights=None``) give the plain empirical mean. Weights
    are normalized to sum to one, so duplicated samples can be stored once
    with a count.
    """

    X: np.ndarray
    y: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        if X.shape[0] == 0:
            raise UsageError("dataset is empty")
        if y.shape != (X.shape[0],):
            raise UsageError(f"label shape {y.shape} does not match {X.shape[0]} rows")
        if self.weights is None:
            wts = np.full(X.shape[0], 1.0 / X.shape[0])
        else:
            wts = np.asarray(self.weights, dtype=float)
            if wts.shape != y.shape or np.any(wts < 0) or wts.sum() <= 0:
                raise UsageError("weights must be nonnegative with positive sum")
            wts = wts / wts.sum()
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "weights", wts)

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> "Dataset":
        samples = list(samples)
        if not samples:
            raise UsageError("dataset is empty")
        return cls(np.stack([s.x for s in samples]), np.array([s.y for s in samples]))

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def __len__(self):
        return self.X.shape[0]


def as_dataset(data) -> Dataset:
    if isinstance(data, Dataset):
        return data
    return Dataset.from_samples(data)


# --------------------------------------------------------------------------
# losses


class Loss:
    """Per-sample loss ``f(w, z)`` with ``z = (x, y)``."""

    kind = "custom"
    has_hessian = True

    def value(self, w, X, y):
        raise NotImplementedError

    def grad(self, w, X, y):
        raise NotImplementedError

    def hess(self, w, X, y):
        raise NotImplementedError

    def params(self) -> dict:
        return {}

    # dataset-level helpers -------------------------------------------------

    def mean_value(self, w, data: Dataset) -> float:
        return float(data.weights @ np.atleast_1d(self.value(w, data.X, data.y)))

    def mean_grad(self, w, data: Dataset) -> np.ndarray:
        return data.weights @ np.atleast_2d(self.grad(w, data.X, data.y))

    def mean_value_grad(self, w, data: Dataset):
        return self.mean_value(w, data), self.mean_grad(w, data)

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({args})"


class MarginLoss(Loss):
    """Loss of the form ``phi(w @ x, y)``.

    Subclasses supply ``phi`` and its first two derivatives in the score.
    """

    def phi(self, t, y):
        raise NotImplementedError

    def dphi(self, t, y):
        raise NotImplementedError

    def d2phi(self, t, y):
        raise NotImplementedError

    def value(self, w, X, y):
        X = np.asarray(X, dtype=float)
        return self.phi(X @ np.asarray(w, dtype=float), np.asarray(y, dtype=float))

    def grad(self, w, X, y):
        X = np.asarray(X, dtype=float)
        t = X @ np.asarray(w, dtype=float)
        return self.dphi(t, np.asarray(y, dtype=float))[..., None] * X

    def hess(self, w, X, y):
        X = np.asarray(X, dtype=float)
        t = X @ np.asarray(w, dtype=float)
        c = self.d2phi(t, np.asarray(y, dtype=float))
        return c[..., None, None] * (X[..., :, None] * X[..., None, :])

    def __eq__(self, other):
        return type(self) is type(other) and self.params() == other.params()

    def __hash__(self):
        return hash((type(self).__name__, tuple(sorted(self.params().items()))))


class SquareLoss(MarginLoss):
    """``(w @ x - y)^2``."""

    kind = "square"

    def phi(self, t, y):
        return (t - y) ** 2

    def dphi(self, t, y):
        return 2.0 * (t - y)

    def d2phi(self, t, y):
        return np.full(np.shape(t - y), 2.0)


def _sigmoid(s):
    # numerically stable logistic function
    s = np.asarray(s, dtype=float)
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    e = np.exp(s[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class LogisticLoss(MarginLoss):
    """``log(1 + exp(-y * w @ x))``."""

    kind = "logistic"

    def phi(self, t, y):
        return np.logaddexp(0.0, -y * t)

    def dphi(self, t, y):
        return -y * _sigmoid(-y * t)

    def d2phi(self, t, y):
        s = _sigmoid(-y * t)
        return y * y * s * (1.0 - s)


class SquaredHingeLoss(MarginLoss):
    """``max(0, 1 - y * w @ x)^2``.

    The second derivative is ``2 y^2`` where the hinge is active and 0
    elsewhere, including at the kink itself.
    """

    kind = "squared_hinge"

    def phi(self, t, y):
        return np.maximum(0.0, 1.0 - y * t) ** 2

    def dphi(self, t, y):
        return -2.0 * y * np.maximum(0.0, 1.0 - y * t)

    def d2phi(self, t, y):
        return np.where(1.0 - y * t > 0, 2.0 * y * y, 0.0)


class CustomLoss(Loss):
    """Loss from per-sample callables ``fn(w, x, y)``.

    ``hess_fn`` may be omitted; Hessian-dependent checks then raise
    :class:`CapabilityError`.
    """

    kind = "custom"

    def __init__(self, value_fn: Callable, grad_fn: Callable,
                 hess_fn: Optional[Callable] = None, name: str = "custom"):
        self._value = value_fn
        self._grad = grad_fn
        self._hess = hess_fn
        self.name = name

    @property
    def has_hessian(self):
        return self._hess is not None

    def _map(self, fn, w, X, y):
        X = np.asarray(X, dtype=float)
        w = np.asarray(w, dtype=float)
        if X.ndim == 1:
            return np.asarray(fn(w, X, float(y)), dtype=float)
        y = np.broadcast_to(np.asarray(y, dtype=float), X.shape[:1])
        return np.array([fn(w, xi, yi) for xi, yi in zip(X, y)], dtype=float)

    def value(self, w, X, y):
        return self._map(self._value, w, X, y)

    def grad(self, w, X, y):
        return self._map(self._grad, w, X, y)

    def hess(self, w, X, y):
        if self._hess is None:
            raise CapabilityError(f"loss {self.name!r} has no Hessian")
        return self._map(self._hess, w, X, y)

    def params(self):
        return {"name": self.name}


LOSSES = {cls.kind: cls for cls in (SquareLoss, LogisticLoss, SquaredHingeLoss)}


def make_loss(kind: str, **params) -> Loss:
    try:
        return LOSSES[kind](**params)
    except KeyError:
        raise ParameterError(f"unknown loss kind {kind!r}; built-ins are {sorted(LOSSES)}")


def smoothness_bound(loss: Loss, y_max: float = 1.0, x_max: float = 1.0) -> float:
    """Smoothness constant of a built-in loss for ``||x|| <= x_max``, ``|y| <= y_max``."""
    if isinstance(loss, SquareLoss):
        return 2.0 * x_max ** 2
    if isinstance(loss, LogisticLoss):
        return 0.25 * y_max ** 2 * x_max ** 2
    if isinstance(loss, SquaredHingeLoss):
        return 2.0 * y_max ** 2 * x_max ** 2
    raise CapabilityError(f"no closed-form smoothness constant for {loss!r}")


# --------------------------------------------------------------------------
# regularizers


class Regularizer:
    """Convex regularizer ``R(w)``.

    ``scaled(c)`` returns ``c * R``; it is how ``g / n`` is formed for the
    penalized problem.
    """

    kind = "custom"
    lam = 0.0
    # prox followed by radial projection gives the exact prox of reg + ball
    ball_compatible = False

    def value(self, w) -> float:
        raise NotImplementedError

    def subgrad(self, w) -> np.ndarray:
        raise NotImplementedError

    def prox(self, v, eta):
        raise CapabilityError(f"regularizer {self!r} has no proximal map")

    def scaled(self, c: float) -> "Regularizer":
        raise NotImplementedError

    def __call__(self, w):
        return self.value(w)


@dataclass(frozen=True)
class Zero(Regularizer):
    kind = "zero"
    ball_compatible = True
    lam: float = 0.0

    def value(self, w):
        return 0.0

    def subgrad(self, w):
        return np.zeros_like(np.asarray(w, dtype=float))

    def prox(self, v, eta):
        return np.array(v, dtype=float)

    def scaled(self, c):
        return self


def soft_threshold(v, t):
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


@dataclass(frozen=True)
class L1(Regularizer):
    """``lam * ||w||_1``."""

    kind = "l1"
    ball_compatible = True
    lam: float = 0.0

    def __post_init__(self):
        if self.lam < 0:
            raise ParameterError("lam must be nonnegative")

    def value(self, w):
        return self.lam * float(np.abs(np.asarray(w, dtype=float)).sum())

    def subgrad(self, w):
        return self.lam * np.sign(np.asarray(w, dtype=float))

    def prox(self, v, eta):
        return soft_threshold(v, eta * self.lam)

    def scaled(self, c):
        return L1(self.lam * c)


@dataclass(frozen=True)
class L2Squared(Regularizer):
    """``(lam / 2) * ||w||_2^2``."""

    kind = "l2sq"
    ball_compatible = True
    lam: float = 0.0

    def __post_init__(self):
        if self.lam < 0:
            raise ParameterError("lam must be nonnegative")

    def value(self, w):
        w = np.asarray(w, dtype=float)
        return 0.5 * self.lam * float(w @ w)

    def subgrad(self, w):
        return self.lam * np.asarray(w, dtype=float)

    def prox(self, v, eta):
        return np.asarray(v, dtype=float) / (1.0 + eta * self.lam)

    def scaled(self, c):
        return L2Squared(self.lam * c)


@dataclass(frozen=True)
class ElasticNet(Regularizer):
    """``l1 * ||w||_1 + (l2 / 2) * ||w||_2^2``."""

    kind = "elastic_net"
    ball_compatible = True
    l1: float = 0.0
    l2: float = 0.0

    def value(self, w):
        w = np.asarray(w, dtype=float)
        return self.l1 * float(np.abs(w).sum()) + 0.5 * self.l2 * float(w @ w)

    def subgrad(self, w):
        w = np.asarray(w, dtype=float)
        return self.l1 * np.sign(w) + self.l2 * w

    def prox(self, v, eta):
        return soft_threshold(v, eta * self.l1) / (1.0 + eta * self.l2)

    def scaled(self, c):
        return ElasticNet(self.l1 * c, self.l2 * c)


class SumRegularizer(Regularizer):
    """Sum of two regularizers; the prox runs Dykstra's splitting."""

    kind = "sum"

    def __init__(self, a: Regularizer, b: Regularizer):
        self.a, self.b = a, b

    def value(self, w):
        return self.a.value(w) + self.b.value(w)

    def subgrad(self, w):
        return self.a.subgrad(w) + self.b.subgrad(w)

    def prox(self, v, eta):
        from .solver import dykstra

        return dykstra(lambda u: self.a.prox(u, eta), lambda u: self.b.prox(u, eta), v)

    def scaled(self, c):
        return SumRegularizer(self.a.scaled(c), self.b.scaled(c))

    def __repr__(self):
        return f"SumRegularizer({self.a!r}, {self.b!r})"


def add_regularizers(a: Regularizer, b: Regularizer) -> Regularizer:
    if isinstance(a, Zero):
        return b
    if isinstance(b, Zero):
        return a
    if type(a) is type(b) and isinstance(a, (L1, L2Squared)):
        return type(a)(a.lam + b.lam)
    parts = {type(a): a, type(b): b}
    if set(parts) == {L1, L2Squared}:
        return ElasticNet(parts[L1].lam, parts[L2Squared].lam)
    return SumRegularizer(a, b)


class CustomRegularizer(Regularizer):
    kind = "custom"

    def __init__(self, value_fn, subgrad_fn, prox_fn=None, scale=1.0, name="custom"):
        self._value = value_fn
        self._subgrad = subgrad_fn
        self._prox = prox_fn
        self.scale = scale
        self.name = name

    def value(self, w):
        return self.scale * float(self._value(np.asarray(w, dtype=float)))

    def subgrad(self, w):
        return self.scale * np.asarray(self._subgrad(np.asarray(w, dtype=float)), dtype=float)

    def prox(self, v, eta):
        if self._prox is None:
            raise CapabilityError(f"regularizer {self.name!r} has no proximal map")
        return np.asarray(self._prox(np.asarray(v, dtype=float), eta * self.scale), dtype=float)

    def scaled(self, c):
        return CustomRegularizer(self._value, self._subgrad, self._prox, self.scale * c, self.name)

    def __repr__(self):
        return f"CustomRegularizer(name={self.name!r}, scale={self.scale})"


REGULARIZERS = {"zero": Zero, "l1": L1, "l2sq": L2Squared}


def make_regularizer(kind: str, lam: float = 0.0) -> Regularizer:
    if kind == "zero":
        return Zero()
    try:
        return REGULARIZERS[kind](lam)
    except KeyError:
        raise ParameterError(f"unknown regularizer kind {kind!r}; built-ins are {sorted(REGULARIZERS)}")


def regularizer_range(reg: Regularizer, radius: float) -> float:
    """``sup - inf`` of a built-in regularizer over the ball of the given radius."""
    if isinstance(reg, Zero):
        return 0.0
    if isinstance(reg, L2Squared):
        return 0.5 * reg.lam * radius ** 2
    if isinstance(reg, L1):
        raise CapabilityError("L1 range depends on the dimension; use radius * sqrt(d) * lam")
    raise CapabilityError(f"no closed-form range for {reg!r}")


# --------------------------------------------------------------------------
# constants and problem specs


@dataclass(frozen=True)
class Constants:
    G: float
    L: float
    beta: float
    sigma: float
    R: float
    d: int

    def __post_init__(self):
        for name in ("G", "L", "beta", "sigma", "R", "d"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")
        cap = 0.5 * min(1.0 / (8.0 * self.G * self.R), self.beta)
        if self.sigma > cap * (1 + 1e-12):
            raise ParameterError(f"sigma={self.sigma} exceeds the curvature cap {cap}")


def curvature_sigma(G: float, R: float, beta: float) -> float:
    return 0.5 * min(1.0 / (8.0 * G * R), beta)


def derive_constants(loss: Loss, domain: Domain, beta: float, L: float,
                     G_opt: Optional[float] = None) -> Constants:
    """Fill in the Lipschitz constant and the curvature constant ``sigma``.

    Without ``G_opt`` the Lipschitz constant is ``sqrt(L / beta)``, which
    holds for twice-differentiable losses that are L-smooth and
    beta-exp-concave.
    """
    if not beta > 0 or not L > 0:
        raise ParameterError(f"beta and L must be positive (beta={beta}, L={L})")
    if G_opt is None:
        if not loss.has_hessian:
            raise CapabilityError("G cannot be derived for a loss without a Hessian; pass G_opt")
        G = math.sqrt(L / beta)
    else:
        if not G_opt > 0:
            raise ParameterError(f"G must be positive, got {G_opt}")
        G = float(G_opt)
    sigma = curvature_sigma(G, domain.radius, beta)
    return Constants(G=G, L=float(L), beta=float(beta), sigma=sigma, R=domain.radius, d=domain.dim)


@dataclass(frozen=True)
class ProblemSpec:
    """Loss, regularizer, ball domain and the user-facing constants.

    ``G`` is optional; when absent it is derived from ``L`` and ``beta``.
    """

    loss: Loss
    reg: Regularizer
    domain: Domain
    L: float
    beta: float
    G: Optional[float] = None
    y_max: float = 1.0
    constants: Constants = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "constants",
                           derive_constants(self.loss, self.domain, self.beta, self.L, self.G))

    @property
    def dim(self):
        return self.domain.dim

    def with_reg(self, reg: Regularizer) -> "ProblemSpec":
        return ProblemSpec(self.loss, reg, self.domain, self.L, self.beta, self.G, self.y_max)

    def to_dict(self) -> dict:
        if self.loss.kind not in LOSSES or self.reg.kind not in REGULARIZERS:
            raise CapabilityError("only built-in losses and regularizers serialize")
        return {
            "loss": {"kind": self.loss.kind, "params": self.loss.params()},
            "reg": {"kind": self.reg.kind, "lambda": float(self.reg.lam)},
            "domain": {"radius": self.domain.radius, "dim": self.domain.dim},
            "constants": {"G": self.G, "L": self.L, "beta": self.beta},
            "y_max": self.y_max,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ProblemSpec":
        try:
            loss = make_loss(doc["loss"]["kind"], **doc["loss"].get("params", {}))
            reg = make_regularizer(doc["reg"]["kind"], doc["reg"].get("lambda", 0.0))
            domain = Domain(float(doc["domain"]["radius"]), int(doc["domain"]["dim"]))
            c = doc["constants"]
        except (KeyError, TypeError) as exc:
            raise UsageError(f"malformed problem document: missing {exc}") from exc
        G = c.get("G")
        return cls(loss, reg, domain, L=float(c["L"]), beta=float(c["beta"]),
                   G=None if G is None else float(G), y_max=float(doc.get("y_max", 1.0)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ProblemSpec":
        return cls.from_dict(json.loads(text))


def composite_eval(loss: Loss, reg: Regularizer, dataset, w) -> float:
    """Empirical composite objective: mean loss plus ``reg(w)``."""
    data = as_dataset(dataset)
    w = np.asarray(w, dtype=float)
    if w.shape != (data.dim,):
        raise UsageError(f"w has shape {w.shape}, expected ({data.dim},)")
    return loss.mean_value(w, data) + reg.value(w)
