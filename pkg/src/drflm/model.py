"""Generalized linear models, the axis-aligned threshold classifier, and mixup pairs.

The GLM loss is the exponential-family negative log likelihood without its
base measure, ``f(w; x, y) = mu(w.x) - y * w.x``.  ``nll_loss`` adds the
base-measure term back (``y**2 / 2`` for the Gaussian family, nothing for the
Bernoulli family), which turns the squared link into the ordinary squared
error.  Gradients of the two coincide.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InvalidInputError
from .numerics import as_vector


class Link(str, Enum):
    SQUARED = "squared"
    LOGISTIC = "logistic"

    def mu(self, z):
        z = np.asarray(z, dtype=float)
        if self is Link.SQUARED:
            return 0.5 * z * z
        # log(1 + e^z) without overflow
        return np.logaddexp(0.0, z)

    def dmu(self, z):
        z = np.asarray(z, dtype=float)
        if self is Link.SQUARED:
            return z
        return 0.5 * (1.0 + np.tanh(0.5 * z))

    def d2mu(self, z):
        z = np.asarray(z, dtype=float)
        if self is Link.SQUARED:
            return np.ones_like(z)
        s = 0.5 * (1.0 + np.tanh(0.5 * z))
        return s * (1.0 - s)

    def base_term(self, y):
        y = np.asarray(y, dtype=float)
        if self is Link.SQUARED:
            return 0.5 * y * y
        return np.zeros_like(y)

    @property
    def K(self) -> float:
        """Smallest K with 1/K <= mu''(z) <= K on |z| <= 1."""
        if self is Link.SQUARED:
            return 1.0
        return float(1.0 / self.d2mu(1.0))

    @property
    def curvature_max(self) -> float:
        return 1.0 if self is Link.SQUARED else 0.25


@dataclass(frozen=True)
class GlmModel:
    w: np.ndarray
    link: Link = Link.SQUARED

    def __post_init__(self):
        object.__setattr__(self, "w", as_vector(self.w, "w"))
        object.__setattr__(self, "link", Link(self.link))

    @property
    def dim(self) -> int:
        return self.w.size

    def predict(self, X) -> np.ndarray:
        return self.link.dmu(np.asarray(X, dtype=float) @ self.w)


def _check_pair(model: GlmModel, x) -> np.ndarray:
    x = as_vector(x, "x")
    if x.size != model.dim:
        raise InvalidInputError(f"feature dimension {x.size} does not match weights {model.dim}")
    return x


def glm_loss(model: GlmModel, x, y: float) -> float:
    x = _check_pair(model, x)
    z = float(x @ model.w)
    return float(model.link.mu(z) - y * z)


def glm_gradient(model: GlmModel, x, y: float) -> np.ndarray:
    x = _check_pair(model, x)
    z = float(x @ model.w)
    return (float(model.link.dmu(z)) - y) * x


def nll_loss(model: GlmModel, x, y: float) -> float:
    return glm_loss(model, x, y) + float(model.link.base_term(y))


# Batched forms used by the training loop; X is (n, d), y is (n,).

def batch_glm_losses(w, X, y, link: Link) -> np.ndarray:
    z = X @ w
    return link.mu(z) - y * z


def batch_nll_losses(w, X, y, link: Link) -> np.ndarray:
    return batch_glm_losses(w, X, y, link) + link.base_term(y)


def batch_gradient(w, X, y, link: Link) -> np.ndarray:
    """Gradient of the mean loss over the rows of X."""
    z = X @ w
    return X.T @ (link.dmu(z) - y) / X.shape[0]


@dataclass(frozen=True)
class ThresholdClassifier:
    """Predicts +1 iff ``x[0] > b``; a tie predicts -1."""

    b: float

    def __post_init__(self):
        if not np.isfinite(self.b):
            raise InvalidInputError(f"threshold must be finite, got {self.b}")

    def predict(self, x) -> int:
        x0 = float(np.atleast_1d(np.asarray(x, dtype=float))[0])
        return 1 if x0 > self.b else -1


def zero_one_loss(c: ThresholdClassifier, x, y: int) -> int:
    if y not in (-1, 1):
        raise InvalidInputError(f"0-1 loss expects labels in {{-1, +1}}, got {y}")
    return int(c.predict(x) != y)


@dataclass(frozen=True)
class MixupSample:
    x: np.ndarray
    y: float
    gamma: float
    j: int
    k: int


def mixup_sample(z1, z2, gamma: float, indices: tuple[int, int] = (0, 1)) -> MixupSample:
    """Convex combination ``gamma * z1 + (1 - gamma) * z2`` of two (x, y) pairs."""
    if not 0.0 <= gamma <= 1.0:
        raise InvalidInputError(f"mixup gamma must lie in [0, 1], got {gamma}")
    x1, y1 = z1
    x2, y2 = z2
    x1 = as_vector(x1, "x1")
    x2 = as_vector(x2, "x2")
    if x1.size != x2.size:
        raise InvalidInputError("mixup samples must share a feature dimension")
    x = gamma * x1 + (1.0 - gamma) * x2
    y = gamma * float(y1) + (1.0 - gamma) * float(y2)
    return MixupSample(x=x, y=y, gamma=float(gamma), j=indices[0], k=indices[1])


def to_pm1(y) -> np.ndarray:
    """{0, 1} class codes to {-1, +1}."""
    y = np.asarray(y, dtype=float)
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise InvalidInputError("expected labels in {0, 1}")
    return 2.0 * y - 1.0


def to_01(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise InvalidInputError("expected labels in {-1, +1}")
    return (y + 1.0) / 2.0
