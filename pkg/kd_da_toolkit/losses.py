"""Temperature softmax, cross-entropy and KL divergence with audited epsilon clamping."""
from __future__ import annotations

import logging
from typing import Union

import numpy as np

from .tensor import Tensor, log_softmax

logger = logging.getLogger(__name__)

EPS = 1e-12

_clamp_events = 0


def clamp_count() -> int:
    """Number of log arguments clamped at ``EPS`` since the last reset."""
    return _clamp_events


def reset_clamp_count() -> None:
    global _clamp_events
    _clamp_events = 0


def clamped_log(x: np.ndarray, where: np.ndarray | None = None) -> np.ndarray:
    """``log(max(x, EPS))``, counting the entries (optionally only under ``where``) that needed the clamp."""
    global _clamp_events
    x = np.asarray(x, dtype=np.float64)
    low = x < EPS
    if where is not None:
        low = low & where
    hits = int(low.sum())
    if hits:
        _clamp_events += hits
        logger.debug("clamped %d log argument(s) at %g", hits, EPS)
    return np.log(np.maximum(x, EPS))


def softmax_temp(logits: np.ndarray, tau: float = 1.0) -> np.ndarray:
    """Softmax of ``logits / tau`` over the last axis.

    Raises:
        ValueError: If ``tau`` is not positive or ``logits`` holds NaN/Inf.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    z = (z - z.max(axis=-1, keepdims=True)) / tau
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_temp(logits: np.ndarray, tau: float = 1.0) -> np.ndarray:
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    z = np.asarray(logits, dtype=np.float64) / tau
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _check_probs(p: np.ndarray, name: str) -> None:
    if p.ndim not in (1, 2) or p.shape[-1] == 0:
        raise ValueError(f"{name} must be a probability vector or a matrix of row vectors, got shape {p.shape}")
    if np.any(p < 0) or not np.allclose(p.sum(axis=-1), 1.0, atol=1e-6):
        raise ValueError(f"{name} rows must be non-negative and sum to 1")


def cross_entropy(y: Union[int, np.ndarray], probs: np.ndarray) -> float:
    """``-log probs[y]``; for a matrix of rows and a label vector, the mean over rows."""
    probs = np.asarray(probs, dtype=np.float64)
    _check_probs(probs, "probs")
    labels = np.atleast_1d(np.asarray(y, dtype=np.int64))
    rows = np.atleast_2d(probs)
    if labels.shape[0] != rows.shape[0]:
        raise ValueError(f"got {labels.shape[0]} labels for {rows.shape[0]} probability rows")
    if np.any(labels < 0) or np.any(labels >= rows.shape[1]):
        raise ValueError(f"labels must lie in [0, {rows.shape[1]})")
    picked = rows[np.arange(rows.shape[0]), labels]
    return float(-clamped_log(picked).mean())


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """``sum p_i log(p_i / q_i)`` with ``0 log 0 = 0``; for matrices, the mean over rows."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"p and q must have the same shape, got {p.shape} and {q.shape}")
    _check_probs(p, "p")
    _check_probs(q, "q")
    positive = p > 0
    terms = np.where(positive, p * (np.log(np.where(positive, p, 1.0)) - clamped_log(q, where=positive)), 0.0)
    rows = np.atleast_2d(terms).sum(axis=-1)
    return float(max(rows.mean(), 0.0))


def entropy_rows(probs: np.ndarray) -> np.ndarray:
    """Shannon entropy (nats) of every row, ``0 log 0 = 0``."""
    p = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    positive = p > 0
    return -np.where(positive, p * np.log(np.where(positive, p, 1.0)), 0.0).sum(axis=-1)


def cross_entropy_objective(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Differentiable mean cross-entropy of ``softmax(logits)`` against integer labels."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    return (log_softmax(logits) * Tensor(-onehot / n)).sum()


__all__ = [
    "EPS",
    "clamp_count",
    "reset_clamp_count",
    "clamped_log",
    "softmax_temp",
    "log_softmax_temp",
    "cross_entropy",
    "kl_divergence",
    "entropy_rows",
    "cross_entropy_objective",
]
