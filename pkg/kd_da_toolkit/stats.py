"""Pearson correlation with a Student-t p-value from the regularized incomplete beta function."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, Sequence

import numpy as np
from scipy.special import gammaln

logger = logging.getLogger(__name__)

BETACF_TOL = 1e-12
BETACF_MAX_ITER = 10_000
_TINY = 1e-300
_PERFECT_TOL = 1e-14


class UndefinedCorrelationError(ValueError):
    """Pearson correlation requested for constant input or fewer than three points."""


@dataclass(frozen=True, slots=True)
class CorrelationReport:
    r: float
    p_value: float
    n: int

    def __post_init__(self) -> None:
        if not -1.0 <= self.r <= 1.0:
            raise ValueError(f"r must lie in [-1, 1], got {self.r}")
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p_value must lie in [0, 1], got {self.p_value}")

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction of the incomplete beta function (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        step = d * c
        h *= step
        if abs(step - 1.0) < BETACF_TOL:
            return h
    raise FloatingPointError(f"incomplete beta continued fraction did not converge for a={a}, b={b}, x={x}")


def betainc_regularized(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function ``I_x(a, b)``."""
    if a <= 0 or b <= 0:
        raise ValueError(f"a and b must be positive, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    log_front = gammaln(a + b) - gammaln(a) - gammaln(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(log_front)
    # The continued fraction converges fast only on one side of the mean.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, dof: float) -> float:
    """``P(|T| >= |t|)`` for a Student-t variable with ``dof`` degrees of freedom."""
    if dof <= 0:
        raise ValueError(f"dof must be positive, got {dof}")
    if math.isinf(t):
        return 0.0
    return min(max(betainc_regularized(dof / 2.0, 0.5, dof / (dof + t * t)), 0.0), 1.0)


def pearson(xs: Sequence[float], ys: Sequence[float]) -> CorrelationReport:
    """Sample Pearson correlation with its two-sided p-value (t-test with ``n - 2`` dof).

    A perfect linear relation reports ``p_value = 0``.

    Raises:
        UndefinedCorrelationError: If fewer than three points are given or
            either sequence is constant.
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape:
        raise ValueError(f"xs and ys must be 1-D of equal length, got {x.shape} and {y.shape}")
    n = x.size
    if n < 3:
        raise UndefinedCorrelationError(f"pearson needs at least 3 points, got {n}")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("pearson is undefined for constant input")
    r = float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))
    one_minus_r2 = 1.0 - r * r
    if one_minus_r2 <= _PERFECT_TOL:
        return CorrelationReport(math.copysign(1.0, r), 0.0, n)
    # t^2 = r^2 (n - 2) / (1 - r^2), so dof / (dof + t^2) reduces to 1 - r^2.
    p = min(max(betainc_regularized((n - 2) / 2.0, 0.5, one_minus_r2), 0.0), 1.0)
    logger.debug("pearson n=%d r=%.6f p=%.3g", n, r, p)
    return CorrelationReport(r, p, n)


__all__ = [
    "UndefinedCorrelationError",
    "CorrelationReport",
    "betainc_regularized",
    "student_t_two_sided_p",
    "pearson",
]
