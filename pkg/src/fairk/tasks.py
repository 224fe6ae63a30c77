"""Desk-scale learning tasks with hand-written losses and gradients.

Parameters are always a flat float64 vector ``w``; each task knows how to
unpack it. Losses are sample means, matching a client's local objective.
"""
from __future__ import annotations

import enum
import math

import numpy as np


def _log_softmax_terms(Z):
    """Return (log-sum-exp per row, softmax) computed stably."""
    zmax = Z.max(axis=1, keepdims=True)
    E = np.exp(Z - zmax)
    s = E.sum(axis=1, keepdims=True)
    return (np.log(s) + zmax).ravel(), E / s


class TaskKind(str, enum.Enum):
    LOGISTIC = "logistic"
    MLP = "mlp"
    QUADRATIC = "quadratic"


class Task:
    kind: TaskKind
    dim: int
    num_classes: int
    is_classifier = True

    def loss_grad(self, w, X, y):
        raise NotImplementedError

    def loss(self, w, X, y) -> float:
        return self.loss_grad(w, X, y)[0]

    def grad(self, w, X, y) -> np.ndarray:
        return self.loss_grad(w, X, y)[1]

    def predict(self, w, X):
        raise NotImplementedError

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        return np.zeros(self.dim)

    def evaluate(self, w, X, y):
        """Mean loss and top-1 accuracy (NaN for regression tasks)."""
        if len(y) == 0:
            raise ValueError("cannot evaluate on an empty set")
        loss = self.loss(w, X, y)
        if not self.is_classifier:
            return loss, math.nan
        acc = float(np.mean(self.predict(w, X) == y))
        return loss, acc


class LogisticRegression(Task):
    """Multinomial logistic regression, ``w = [W (p x C) row-major, b (C)]``."""

    kind = TaskKind.LOGISTIC

    def __init__(self, num_features: int, num_classes: int):
        self.p = num_features
        self.num_classes = num_classes
        self.dim = num_features * num_classes + num_classes

    def _unpack(self, w):
        W = w[: self.p * self.num_classes].reshape(self.p, self.num_classes)
        return W, w[self.p * self.num_classes:]

    def logits(self, w, X):
        W, b = self._unpack(w)
        return X @ W + b

    def loss_grad(self, w, X, y):
        Z = self.logits(w, X)
        n = X.shape[0]
        lse, G = _log_softmax_terms(Z)
        loss = float(np.mean(lse - Z[np.arange(n), y]))
        G[np.arange(n), y] -= 1.0
        G /= n
        return loss, np.concatenate([(X.T @ G).ravel(), G.sum(axis=0)])

    def predict(self, w, X):
        # argmax returns the first maximum, so w = 0 predicts class 0
        return np.argmax(self.logits(w, X), axis=1)


class SmallMLP(Task):
    """One tanh hidden layer followed by a softmax output."""

    kind = TaskKind.MLP

    def __init__(self, num_features: int, hidden: int, num_classes: int):
        self.p, self.h, self.num_classes = num_features, hidden, num_classes
        self._sizes = [num_features * hidden, hidden, hidden * num_classes, num_classes]
        self.dim = sum(self._sizes)

    def _unpack(self, w):
        a, b, c, _ = np.cumsum(self._sizes)
        return (
            w[:a].reshape(self.p, self.h), w[a:b],
            w[b:c].reshape(self.h, self.num_classes), w[c:],
        )

    def init_params(self, rng):
        w = np.zeros(self.dim)
        W1, _, W2, _ = self._unpack(w)
        W1[:] = rng.normal(0.0, 1.0 / math.sqrt(self.p), W1.shape)
        W2[:] = rng.normal(0.0, 1.0 / math.sqrt(self.h), W2.shape)
        return w

    def _forward(self, w, X):
        W1, b1, W2, b2 = self._unpack(w)
        H = np.tanh(X @ W1 + b1)
        return H, H @ W2 + b2

    def loss_grad(self, w, X, y):
        W1, _, W2, _ = self._unpack(w)
        n = X.shape[0]
        H, Z = self._forward(w, X)
        lse, dZ = _log_softmax_terms(Z)
        loss = float(np.mean(lse - Z[np.arange(n), y]))
        dZ[np.arange(n), y] -= 1.0
        dZ /= n
        dH = (dZ @ W2.T) * (1.0 - H ** 2)
        grad = np.concatenate([
            (X.T @ dH).ravel(), dH.sum(axis=0), (H.T @ dZ).ravel(), dZ.sum(axis=0),
        ])
        return loss, grad

    def predict(self, w, X):
        return np.argmax(self._forward(w, X)[1], axis=1)


class SyntheticQuadratic(Task):
    """Least squares ``0.5 * (x.w - y)^2`` averaged over samples."""

    kind = TaskKind.QUADRATIC
    is_classifier = False

    def __init__(self, num_features: int, num_groups: int = 1):
        self.dim = num_features
        self.num_classes = num_groups

    def loss_grad(self, w, X, y):
        r = X @ w - y
        return 0.5 * float(np.mean(r * r)), X.T @ r / X.shape[0]

    def predict(self, w, X):
        return X @ w


def make_task(kind, num_features: int, num_classes: int, hidden: int = 32) -> Task:
    kind = TaskKind(kind)
    if kind is TaskKind.LOGISTIC:
        return LogisticRegression(num_features, num_classes)
    if kind is TaskKind.MLP:
        return SmallMLP(num_features, hidden, num_classes)
    return SyntheticQuadratic(num_features, num_classes)
