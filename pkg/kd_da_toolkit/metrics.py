"""Teacher-side augmentation quality metrics and student evaluation.

``t_stddev`` groups the teacher's probability outputs over the training stream
into windows of ``K`` consecutive samples, averages each window and measures how
much those window means move: ``m`` is the per-class (population) variance of the
window means and ``m_bar`` the class-average of ``sqrt(m)``. Lower is better.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from .data import Dataset
from .losses import cross_entropy, entropy_rows

logger = logging.getLogger(__name__)

ZERO_VARIANCE_TOL = 1e-24


class WindowCountError(ValueError):
    """Fewer than two complete windows were collected."""


class Predictor(Protocol):
    def predict_proba(self, images: np.ndarray, tau: float = 1.0) -> np.ndarray: ...


def shannon_entropy(p: np.ndarray) -> float:
    """``-sum p_i log p_i`` in nats with ``0 log 0 = 0``."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError(f"p must be a non-empty probability vector, got shape {p.shape}")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-6:
        raise ValueError("p must be non-negative and sum to 1")
    return float(max(entropy_rows(p)[0], 0.0))


@dataclass(slots=True)
class WindowStats:
    """Streaming window means with a running (Welford) variance across windows.

    Rows are buffered until ``window_size`` of them are available; each window
    mean is then taken over exactly those rows. A trailing partial window is
    never counted.
    """

    window_size: int = 640
    keep_means: bool = True
    window_means: List[np.ndarray] = field(default_factory=list)
    _pending: List[np.ndarray] = field(default_factory=list, repr=False)
    _pending_rows: int = field(default=0, repr=False)
    _count: int = field(default=0, repr=False)
    _mean: Optional[np.ndarray] = field(default=None, repr=False)
    _m2: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.window_size < 1:
            raise ValueError(f"window_size must be >= 1, got {self.window_size}")

    @property
    def window_count(self) -> int:
        return self._count

    @property
    def pending_rows(self) -> int:
        return self._pending_rows

    def update(self, probs: np.ndarray) -> None:
        """Append probability rows (N x C) in stream order."""
        probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
        if self._mean is not None and probs.shape[1] != self._mean.shape[0]:
            raise ValueError(f"expected {self._mean.shape[0]} classes, got {probs.shape[1]}")
        if probs.shape[0] == 0:
            return
        self._pending.append(probs)
        self._pending_rows += probs.shape[0]
        if self._pending_rows < self.window_size:
            return
        rows = np.concatenate(self._pending, axis=0)
        full = rows.shape[0] // self.window_size
        for w in range(full):
            self._push(rows[w * self.window_size : (w + 1) * self.window_size].mean(axis=0))
        rest = rows[full * self.window_size :]
        self._pending = [rest] if rest.shape[0] else []
        self._pending_rows = rest.shape[0]

    def _push(self, u: np.ndarray) -> None:
        if self.keep_means:
            self.window_means.append(u)
        if self._mean is None:
            self._mean = np.zeros_like(u)
            self._m2 = np.zeros_like(u)
        self._count += 1
        delta = u - self._mean
        self._mean += delta / self._count
        self._m2 += delta * (u - self._mean)

    @classmethod
    def from_matrix(cls, window_means: np.ndarray) -> "WindowStats":
        """Build the statistic from already materialised window means (one row per window)."""
        u = np.atleast_2d(np.asarray(window_means, dtype=np.float64))
        stats = cls(window_size=1)
        for row in u:
            stats._push(row.copy())
        return stats

    def result(self) -> Tuple[np.ndarray, float]:
        """Return ``(m, m_bar)``.

        Raises:
            WindowCountError: If fewer than two complete windows were seen.
        """
        if self._count < 2 or self._m2 is None:
            raise WindowCountError(f"need at least 2 complete windows, got {self._count}")
        m = np.maximum(self._m2 / self._count, 0.0)
        return m, float(np.sqrt(m).mean())


StreamFactory = Callable[[int], Iterable[Union[np.ndarray, object]]]


def _images_of(item: object) -> np.ndarray:
    images = getattr(item, "images", item)
    return np.asarray(images, dtype=np.float64)


def t_stddev(teacher: Predictor, stream: StreamFactory, K: int = 640, epochs: int = 1) -> Tuple[np.ndarray, float]:
    """T. stddev of ``teacher`` over ``epochs`` passes of ``stream``.

    Args:
        teacher: Frozen model; probabilities are taken at temperature 1.
        stream: ``stream(epoch)`` yields the epoch's batches (composed batches
            or plain image arrays) in training order.
        K: Window size in samples.
        epochs: Number of passes.

    Returns:
        ``(m, m_bar)``: per-class variance of the window means and its
        class-averaged square root.
    """
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    stats = WindowStats(window_size=K, keep_means=False)
    for epoch in range(epochs):
        for item in stream(epoch):
            stats.update(teacher.predict_proba(_images_of(item), 1.0))
    logger.debug("t_stddev: %d windows of %d samples, %d trailing rows dropped", stats.window_count, K, stats.pending_rows)
    return stats.result()


def _check_batches(prob_batches: Sequence[np.ndarray]) -> List[np.ndarray]:
    if len(prob_batches) == 0:
        raise ValueError("need at least one probability batch")
    out = []
    for i, p in enumerate(prob_batches):
        p = np.asarray(p, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] < 2 or p.shape[1] < 2:
            raise ValueError(f"batch {i} must have at least 2 rows and 2 class observations, got shape {p.shape}")
        out.append(p)
    return out


def covariance_metric_vbar(prob_batches: Sequence[np.ndarray]) -> float:
    """Mean entry of the per-batch sample covariance between probability rows, averaged over batches."""
    return float(np.mean([np.cov(p).mean() for p in _check_batches(prob_batches)]))


def _row_correlation(p: np.ndarray) -> Tuple[np.ndarray, int]:
    cov = np.atleast_2d(np.cov(p))
    var = np.diag(cov).copy()
    zero = var <= ZERO_VARIANCE_TOL
    std = np.sqrt(np.where(zero, 1.0, var))
    corr = np.clip(cov / np.outer(std, std), -1.0, 1.0)
    corr[zero, :] = 0.0
    corr[:, zero] = 0.0
    return corr, int(zero.sum())


def correlation_metric_rbar(
    prob_batches: Sequence[np.ndarray], *, return_zero_variance: bool = False
) -> Union[float, Tuple[float, int]]:
    """Mean entry of the per-batch correlation matrix between probability rows, averaged over batches.

    Rows with zero variance have no defined correlation and count as 0.
    """
    means, zeros = [], 0
    for p in _check_batches(prob_batches):
        corr, z = _row_correlation(p)
        means.append(corr.mean())
        zeros += z
    if zeros:
        logger.debug("rbar: %d zero-variance row(s) counted as correlation 0", zeros)
    rbar = float(np.mean(means))
    return (rbar, zeros) if return_zero_variance else rbar


def eval_test_loss(model: Predictor, testset: Dataset) -> Tuple[float, float]:
    """Mean cross-entropy (temperature 1) and accuracy on ``testset``."""
    probs = model.predict_proba(testset.images, 1.0)
    loss = cross_entropy(testset.labels, probs)
    accuracy = float(np.mean(np.argmax(probs, axis=1) == testset.labels))
    return loss, accuracy


__all__ = [
    "WindowCountError",
    "Predictor",
    "shannon_entropy",
    "WindowStats",
    "t_stddev",
    "covariance_metric_vbar",
    "correlation_metric_rbar",
    "eval_test_loss",
]
