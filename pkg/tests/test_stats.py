"""Tests for Pearson correlation and its incomplete-beta p-value."""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate, special

from kd_da_toolkit.stats import (
    CorrelationReport,
    UndefinedCorrelationError,
    betainc_regularized,
    pearson,
    student_t_two_sided_p,
)


def _t_density(t: float, dof: float) -> float:
    log_norm = math.lgamma((dof + 1) / 2) - math.lgamma(dof / 2) - 0.5 * math.log(dof * math.pi)
    return math.exp(log_norm - (dof + 1) / 2 * math.log1p(t * t / dof))


def _oracle(xs, ys):
    """r from the definition, p by integrating the t density over both tails."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    n = x.size
    dx, dy = x - x.mean(), y - y.mean()
    r = float(np.sum(dx * dy) / math.sqrt(np.sum(dx * dx) * np.sum(dy * dy)))
    t = abs(r) * math.sqrt((n - 2) / (1 - r * r))
    tail, _ = integrate.quad(_t_density, t, np.inf, args=(n - 2,), epsabs=1e-13, epsrel=1e-12)
    return r, 2.0 * tail


ORACLE_CASES = [
    ([1, 2, 3, 4, 5], [2, 1, 4, 3, 6]),
    ([0.1, 0.4, 0.2, 0.9, 0.5, 0.3], [1.0, 1.2, 0.9, 0.3, 0.8, 1.1]),
    ([1, 2, 3], [1, 3, 2]),
    (list(range(12)), [3, 1, 4, 1, 5, 9, 2, 6, 5, 3, 5, 8]),
    (list(np.random.default_rng(0).normal(size=30)), list(np.random.default_rng(1).normal(size=30))),
]


@pytest.mark.parametrize("xs, ys", ORACLE_CASES)
def test_pearson_matches_numeric_integration(xs, ys) -> None:
    report = pearson(xs, ys)
    r, p = _oracle(xs, ys)
    assert report.r == pytest.approx(r, abs=1e-12)
    assert report.p_value == pytest.approx(p, abs=1e-6)
    assert report.n == len(xs)


def test_perfect_correlation() -> None:
    report = pearson([1, 2, 3], [2, 4, 6])
    assert report.r == 1.0
    assert report.p_value == 0.0
    assert pearson([1, 2, 3, 4], [-1, -2, -3, -4]).r == -1.0


def test_affine_invariance() -> None:
    xs = [0.3, 1.7, 2.2, 0.9, 4.1]
    ys = [1.0, 0.4, 2.5, 2.0, 3.3]
    base = pearson(xs, ys)
    moved = pearson([3.0 * x - 7.0 for x in xs], [0.5 * y + 2.0 for y in ys])
    assert moved.r == pytest.approx(base.r, abs=1e-12)
    assert moved.p_value == pytest.approx(base.p_value, abs=1e-12)
    flipped = pearson([-x for x in xs], ys)
    assert flipped.r == pytest.approx(-base.r, abs=1e-12)


@pytest.mark.parametrize("xs, ys", [([1, 2], [3, 4]), ([1, 1, 1], [1, 2, 3]), ([1, 2, 3], [5, 5, 5])])
def test_undefined_correlation(xs, ys) -> None:
    with pytest.raises(UndefinedCorrelationError):
        pearson(xs, ys)


def test_length_mismatch() -> None:
    with pytest.raises(ValueError):
        pearson([1, 2, 3], [1, 2])


@pytest.mark.parametrize("a, b, x", [(0.5, 0.5, 0.3), (2.0, 0.5, 0.9), (14.0, 0.5, 0.2), (3.0, 7.0, 0.45)])
def test_betainc_agrees_with_scipy(a: float, b: float, x: float) -> None:
    assert betainc_regularized(a, b, x) == pytest.approx(float(special.betainc(a, b, x)), abs=1e-12)


def test_betainc_edges_and_validation() -> None:
    assert betainc_regularized(2.0, 3.0, 0.0) == 0.0
    assert betainc_regularized(2.0, 3.0, 1.0) == 1.0
    with pytest.raises(ValueError):
        betainc_regularized(0.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        betainc_regularized(1.0, 1.0, 1.5)


def test_student_t_p_value() -> None:
    assert student_t_two_sided_p(0.0, 5) == pytest.approx(1.0)
    assert student_t_two_sided_p(math.inf, 5) == 0.0
    # dof=1 is Cauchy: P(|T| >= 1) = 1/2
    assert student_t_two_sided_p(1.0, 1) == pytest.approx(0.5, abs=1e-12)


def test_report_validation() -> None:
    with pytest.raises(ValueError):
        CorrelationReport(1.5, 0.1, 3)
    assert CorrelationReport(0.5, 0.2, 4).to_dict() == {"r": 0.5, "p_value": 0.2, "n": 4}
