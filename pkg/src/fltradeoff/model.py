"""Multinomial logistic regression with analytic gradients.

Parameters are stored flat as a ``C x (F + 1)`` matrix in row-major order;
the last column multiplies a constant bias feature.
"""

from __future__ import annotations

import numpy as np
from scipy.special import log_softmax, softmax

from .errors import DimensionMismatch


def num_params(n_features: int, n_classes: int) -> int:
    return n_classes * (n_features + 1)


def augment(X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.hstack([X, np.ones((X.shape[0], 1))])


def weights_matrix(w: np.ndarray, n_features: int, n_classes: int) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.size != num_params(n_features, n_classes):
        raise DimensionMismatch(f"expected {num_params(n_features, n_classes)} parameters, got {w.size}")
    return w.reshape(n_classes, n_features + 1)


def predict_proba(w, X, n_classes: int) -> np.ndarray:
    Xa = augment(X)
    W = weights_matrix(w, Xa.shape[1] - 1, n_classes)
    return softmax(Xa @ W.T, axis=1)


def predict(w, X, n_classes: int) -> np.ndarray:
    return np.argmax(predict_proba(w, X, n_classes), axis=1)


def accuracy(w, X, y, n_classes: int) -> float:
    y = np.asarray(y)
    if y.size == 0:
        return 0.0
    return float(np.mean(predict(w, X, n_classes) == y))


def loss(w, X, y, n_classes: int) -> float:
    """Mean cross-entropy."""
    Xa = augment(X)
    W = weights_matrix(w, Xa.shape[1] - 1, n_classes)
    logp = log_softmax(Xa @ W.T, axis=1)
    return float(-np.mean(logp[np.arange(Xa.shape[0]), np.asarray(y, dtype=int)]))


def per_example_grads(w, X, y, n_classes: int) -> np.ndarray:
    """Gradients ``(softmax(W x) - e_y) x^T`` flattened, one row per example."""
    Xa = augment(X)
    W = weights_matrix(w, Xa.shape[1] - 1, n_classes)
    resid = softmax(Xa @ W.T, axis=1)
    resid[np.arange(Xa.shape[0]), np.asarray(y, dtype=int)] -= 1.0
    return (resid[:, :, None] * Xa[:, None, :]).reshape(Xa.shape[0], -1)


def grad(w, X, y, n_classes: int) -> np.ndarray:
    """Gradient of the mean cross-entropy over the batch."""
    return per_example_grads(w, X, y, n_classes).mean(axis=0)


def init_params(n_features: int, n_classes: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    return rng.normal(0.0, scale, size=num_params(n_features, n_classes))
