"""Numerically stable classification losses returning (loss, grad)."""

from __future__ import annotations

import numpy as np

from .layers import NonFiniteError


def _finite(z: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(z)):
        raise NonFiniteError(f"non-finite {name}")


def sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid_bce(logits: np.ndarray, targets: np.ndarray, weights: np.ndarray | None = None):
    """Weighted sum of binary cross-entropies on logits.

    Elements with weight 0 add nothing to the loss and get an exact zero gradient.
    """
    logits = np.asarray(logits)
    _finite(logits, "logits")
    t = np.asarray(targets, dtype=logits.dtype)
    w = np.ones_like(logits) if weights is None else np.asarray(weights, dtype=logits.dtype)
    if t.shape != logits.shape or w.shape != logits.shape:
        raise ValueError(f"shape mismatch: logits {logits.shape}, targets {t.shape}, weights {w.shape}")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    # softplus(z) - t*z, written to avoid overflow
    per = np.maximum(logits, 0) - t * logits + np.log1p(np.exp(-np.abs(logits)))
    on = w != 0
    loss = float(np.sum(np.where(on, w * per, 0.0)))
    grad = np.where(on, w * (sigmoid(logits) - t), 0.0).astype(logits.dtype)
    return loss, grad


def log_softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    m = z.max(axis=axis, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=axis, keepdims=True))


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax_ce(logits: np.ndarray, one_hot: np.ndarray):
    """Mean cross-entropy over rows."""
    logits = np.asarray(logits)
    _finite(logits, "logits")
    if one_hot.shape != logits.shape:
        raise ValueError(f"shape mismatch: logits {logits.shape}, targets {one_hot.shape}")
    n = logits.shape[0]
    loss = float(-(one_hot * log_softmax(logits)).sum() / n)
    grad = (softmax(logits) - one_hot) / n
    return loss, grad.astype(logits.dtype)
