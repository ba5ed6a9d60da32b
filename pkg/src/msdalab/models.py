"""Predictors and the loss family l = h(f) - y f."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

from .errors import DegenerateInputError, ShapeError
from .masks import Mask
from .stochastics import RngStream

KINK_MARGIN = 1e-6


@dataclass(frozen=True)
class LossFamily:
    """A twice-differentiable link h with its first three derivatives.

    ``loss`` computes h(f) - y f; families may override it for stability.
    """

    name: str
    h: Callable
    dh: Callable
    d2h: Callable
    d3h: Callable | None = None
    loss: Callable | None = None

    def third(self, f, step: float = 1e-5):
        if self.d3h is not None:
            return self.d3h(f)
        # central difference of h''; O(step^2) error
        return (self.d2h(f + step) - self.d2h(f - step)) / (2.0 * step)


def _logistic_loss(f, y):
    f = np.asarray(f, dtype=float)
    y = np.asarray(y, dtype=float)
    # log(1 + e^f) - y f, split by sign so neither branch overflows or cancels
    pos = np.log1p(np.exp(-np.abs(f)))
    return np.where(f > 0, pos + (1.0 - y) * f, pos - y * f)


def _sig_d2(f):
    s = expit(f)
    return s * (1.0 - s)


def _sig_d3(f):
    s = expit(f)
    return s * (1.0 - s) * (1.0 - 2.0 * s)


LOGISTIC = LossFamily(
    name="logistic",
    h=lambda f: np.logaddexp(0.0, f),
    dh=expit,
    d2h=_sig_d2,
    d3h=_sig_d3,
    loss=_logistic_loss,
)


def point_loss(family: LossFamily, f, y):
    out = family.loss(f, y) if family.loss is not None else family.h(f) - np.asarray(y) * f
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class GlmModel:
    """Linear score theta . x + bias; the bias is not a mixed coordinate."""

    theta: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).ravel()
        if not np.all(np.isfinite(theta)) or not np.isfinite(self.bias):
            raise ShapeError("model parameters must be finite")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def d(self) -> int:
        return self.theta.size

    def params(self) -> np.ndarray:
        return np.append(self.theta, self.bias)

    @classmethod
    def from_params(cls, p) -> "GlmModel":
        p = np.asarray(p, dtype=float)
        return cls(p[:-1], float(p[-1]))

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.d:
            raise ShapeError(f"input has {X.shape[-1]} coordinates, model expects {self.d}")
        return X @ self.theta + self.bias

    def input_grad(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.broadcast_to(self.theta, X.shape).copy()

    def input_hessian(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.zeros(X.shape + (self.d,))

    def to_json(self) -> dict:
        return {"kind": "glm", "theta": self.theta.tolist(), "bias": self.bias}


def glm_predict(m: GlmModel, x) -> float:
    return float(m.predict(np.asarray(x, dtype=float).ravel()))


@dataclass(frozen=True)
class TwoLayerNet:
    """f(x) = theta1 . relu(W x) + theta0, with relu'(0) taken as 0."""

    W: np.ndarray
    theta1: np.ndarray
    theta0: float = 0.0

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        t1 = np.asarray(self.theta1, dtype=float).ravel()
        if W.shape[0] != t1.size or W.shape[0] < 1:
            raise ShapeError(f"W has {W.shape[0]} rows but theta1 has {t1.size} entries")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(t1)) and np.isfinite(self.theta0)):
            raise ShapeError("network parameters must be finite")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "theta1", t1)
        object.__setattr__(self, "theta0", float(self.theta0))

    @property
    def d(self) -> int:
        return self.W.shape[1]

    @classmethod
    def random(cls, rng: RngStream, d: int, hidden: int) -> "TwoLayerNet":
        gen = rng.generator
        W = gen.standard_normal((hidden, d)) / np.sqrt(d)
        theta1 = gen.standard_normal(hidden) / np.sqrt(hidden)
        return cls(W, theta1, float(gen.standard_normal()))

    def _pre(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.d:
            raise ShapeError(f"input has {X.shape[-1]} coordinates, network expects {self.d}")
        return X @ self.W.T

    def predict(self, X) -> np.ndarray:
        return np.maximum(self._pre(X), 0.0) @ self.theta1 + self.theta0

    def hidden_grad(self, X) -> np.ndarray:
        """df / d(Wx): theta1 masked by the active units."""
        return (self._pre(X) > 0.0) * self.theta1

    def input_grad(self, X) -> np.ndarray:
        return self.hidden_grad(X) @ self.W

    def input_hessian(self, X) -> np.ndarray:
        # piecewise linear: zero wherever the gradient exists
        X = np.asarray(X, dtype=float)
        return np.zeros(X.shape + (self.d,))

    def layer1_grad(self, x) -> np.ndarray:
        """df / dW = (df / d(Wx)) x^T for a single input."""
        x = np.asarray(x, dtype=float).ravel()
        return np.outer(self.hidden_grad(x), x)

    def to_json(self) -> dict:
        return {"kind": "two_layer_relu", "W": self.W.tolist(), "theta1": self.theta1.tolist(), "theta0": self.theta0}


def net_predict(net: TwoLayerNet, x) -> float:
    return float(net.predict(np.asarray(x, dtype=float).ravel()))


def net_input_grad(net: TwoLayerNet, x) -> np.ndarray:
    return net.input_grad(np.asarray(x, dtype=float).ravel())


def net_layer1_grad(net: TwoLayerNet, x) -> np.ndarray:
    return net.layer1_grad(x)


def model_from_json(obj: dict):
    if obj.get("kind") == "glm":
        return GlmModel(obj["theta"], obj["bias"])
    if obj.get("kind") == "two_layer_relu":
        return TwoLayerNet(obj["W"], obj["theta1"], obj["theta0"])
    raise ShapeError(f"unknown model kind {obj.get('kind')!r}")


def flatness_identity_check(net: TwoLayerNet, x, mask: Mask, rng: RngStream | None = None, scale: float = 1e-3):
    """Both sides of  ((1 - M) * grad_x f)^T x  =  tr((df/dW)^T W diag(1 - M)).

    The left side uses the input gradient, the right side the first-layer
    weight gradient.  Inputs within ``KINK_MARGIN`` of a ReLU kink are
    perturbed (needs ``rng``), up to 100 times.
    Returns ``(lhs, rhs, |lhs - rhs|)``.
    """
    x = np.asarray(x, dtype=float).ravel()
    for _ in range(101):
        if np.all(np.abs(net.W @ x) > KINK_MARGIN):
            break
        if rng is None:
            raise DegenerateInputError("input lies on a ReLU kink and no rng was given to resample")
        x = x + scale * rng.generator.standard_normal(x.shape)
    else:
        raise DegenerateInputError("input stayed near a ReLU kink after 100 resamples")
    keep = 1.0 - mask.values
    if keep.shape != x.shape:
        raise ShapeError("mask and input lengths differ")
    lhs = float((keep * net_input_grad(net, x)) @ x)
    rhs = float(np.trace(net_layer1_grad(net, x).T @ net.W @ np.diag(keep)))
    return lhs, rhs, abs(lhs - rhs)
