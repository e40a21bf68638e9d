"""Desk-scale models with hand-written gradients.

Each model owns a flat parameter vector and describes how that vector splits
into layers, which is the unit of compression.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from fedcorr.errors import InvalidInput
from fedcorr.updates import ReshapeSpec, flat_spec


@dataclass(frozen=True)
class Layer:
    name: str
    start: int
    stop: int
    spec: ReshapeSpec
    compress: bool = True

    @property
    def size(self) -> int:
        return self.stop - self.start


def default_slice_rows(d: int) -> int:
    return max(1, math.isqrt(d - 1) + 1) if d > 1 else 1


class LinearRegression:
    """Squared loss ``|R x - y|^2 / N`` with a bias column appended to R."""

    kind = "linreg"

    def __init__(self, feature_dim: int, slice_rows: int | None = None):
        self.d = feature_dim + 1
        m = slice_rows or default_slice_rows(self.d)
        self.layers = [Layer("x", 0, self.d, flat_spec(self.d, m=m))]

    def init_params(self, rng) -> np.ndarray:
        return np.zeros(self.d)

    @staticmethod
    def design(features) -> np.ndarray:
        return np.hstack([features, np.ones((features.shape[0], 1))])

    def loss_grad(self, x, features, targets):
        r = self.design(features)
        resid = r @ x - targets
        n = features.shape[0]
        return float(resid @ resid / n), (2.0 * (r.T @ (r @ x)) - 2.0 * (r.T @ targets)) / n

    def loss(self, x, features, targets) -> float:
        resid = self.design(features) @ x - targets
        return float(resid @ resid / features.shape[0])

    def accuracy(self, x, features, targets):
        return None


class LogisticRegression:
    """Mean of ``log(1 + exp(-y xi^T x))`` over samples, labels in ``{-1, +1}``."""

    kind = "logreg"

    def __init__(self, feature_dim: int, slice_rows: int | None = None):
        self.d = feature_dim
        m = slice_rows or default_slice_rows(self.d)
        self.layers = [Layer("x", 0, self.d, flat_spec(self.d, m=m))]

    def init_params(self, rng) -> np.ndarray:
        return np.zeros(self.d)

    def loss(self, x, features, labels) -> float:
        return float(np.mean(np.logaddexp(0.0, -labels * (features @ x))))

    def loss_grad(self, x, features, labels):
        margins = labels * (features @ x)
        # sigma(-margin), computed without overflow
        weight = np.exp(-np.logaddexp(0.0, margins))
        grad = -(features.T @ (labels * weight)) / features.shape[0]
        return float(np.mean(np.logaddexp(0.0, -margins))), grad

    def accuracy(self, x, features, labels) -> float:
        pred = np.where(features @ x >= 0, 1, -1)
        return float(np.mean(pred == labels))


class MLP:
    """One hidden ReLU layer and a softmax output, trained with cross-entropy.

    Parameter layout: ``fc1.weight`` (hidden x in, row-major), ``fc1.bias``,
    ``fc2.weight`` (classes x hidden), ``fc2.bias``. Each weight row is one
    update slice, so ``fc1.weight`` forms an ``in x hidden`` update matrix.
    Weights start uniform in ``±1/sqrt(fan_in)``, biases at zero.
    """

    kind = "mlp"

    def __init__(self, in_dim: int, hidden: int, classes: int, compress_biases: bool = False):
        if min(in_dim, hidden, classes) < 1:
            raise InvalidInput("layer sizes must be positive")
        self.in_dim, self.hidden, self.classes = in_dim, hidden, classes
        shapes = [
            ("fc1.weight", hidden, in_dim),
            ("fc1.bias", hidden, 1),
            ("fc2.weight", classes, hidden),
            ("fc2.bias", classes, 1),
        ]
        self.layers = []
        start = 0
        for name, rows, cols in shapes:
            size = rows * cols
            is_bias = name.endswith("bias")
            spec = flat_spec(size) if is_bias else flat_spec(size, m=cols)
            self.layers.append(Layer(name, start, start + size, spec, compress_biases or not is_bias))
            start += size
        self.d = start

    def _unpack(self, x):
        l1w, l1b, l2w, l2b = self.layers
        return (
            x[l1w.start : l1w.stop].reshape(self.hidden, self.in_dim),
            x[l1b.start : l1b.stop],
            x[l2w.start : l2w.stop].reshape(self.classes, self.hidden),
            x[l2b.start : l2b.stop],
        )

    def init_params(self, rng) -> np.ndarray:
        x = np.zeros(self.d)
        l1w, _, l2w, _ = self.layers
        b1 = 1.0 / math.sqrt(self.in_dim)
        b2 = 1.0 / math.sqrt(self.hidden)
        x[l1w.start : l1w.stop] = rng.uniform(-b1, b1, l1w.size)
        x[l2w.start : l2w.stop] = rng.uniform(-b2, b2, l2w.size)
        return x

    def _forward(self, x, features):
        w1, b1, w2, b2 = self._unpack(x)
        pre = features @ w1.T + b1
        act = np.maximum(pre, 0.0)
        logits = act @ w2.T + b2
        logits -= logits.max(axis=1, keepdims=True)
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        return pre, act, logp

    def loss(self, x, features, labels) -> float:
        _, _, logp = self._forward(x, features)
        return float(-np.mean(logp[np.arange(labels.size), labels]))

    def loss_grad(self, x, features, labels):
        w1, _, w2, _ = self._unpack(x)
        n = features.shape[0]
        pre, act, logp = self._forward(x, features)
        loss = float(-np.mean(logp[np.arange(n), labels]))
        dlogits = np.exp(logp)
        dlogits[np.arange(n), labels] -= 1.0
        dlogits /= n
        dw2 = dlogits.T @ act
        db2 = dlogits.sum(axis=0)
        dpre = (dlogits @ w2) * (pre > 0)
        dw1 = dpre.T @ features
        db1 = dpre.sum(axis=0)
        return loss, np.concatenate([dw1.ravel(), db1, dw2.ravel(), db2])

    def accuracy(self, x, features, labels) -> float:
        _, _, logp = self._forward(x, features)
        return float(np.mean(np.argmax(logp, axis=1) == labels))


def build_model(kind: str, feature_dim: int, classes: int = 10, hidden: int = 120, slice_rows=None):
    if kind == "linreg":
        return LinearRegression(feature_dim, slice_rows)
    if kind == "logreg":
        return LogisticRegression(feature_dim, slice_rows)
    if kind == "mlp":
        return MLP(feature_dim, hidden, classes)
    raise InvalidInput(f"unknown model kind {kind!r}")
