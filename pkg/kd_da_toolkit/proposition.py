"""Generalisation gap of the distilled risk under correlated sampling.

A :class:`SyntheticWorld` is a finite input space with a marginal, a teacher
table and a fixed predictor table. Sequences are drawn from a copy chain: the
first element comes from the marginal and every next element repeats its
predecessor with probability ``rho`` or is a fresh marginal draw otherwise. Each
position keeps the marginal, while ``rho`` dials the correlation between
positions. The gap ``delta`` is the empirical distilled risk of a sequence minus
the true distilled risk; its mean does not depend on ``rho`` and its second
moment grows with it.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .losses import clamped_log

logger = logging.getLogger(__name__)

ENUMERATION_LIMIT = 1_000_000
MIN_REPETITIONS = 100


class EnumerationGuardError(ValueError):
    """Exhaustive enumeration would visit more than ``ENUMERATION_LIMIT`` sequences."""


def _check_rows(table: np.ndarray, name: str) -> np.ndarray:
    table = np.asarray(table, dtype=np.float64)
    if np.any(table < 0) or not np.allclose(table.sum(axis=-1), 1.0, atol=1e-9):
        raise ValueError(f"{name} rows must be non-negative and sum to 1")
    return table


@dataclass(frozen=True, slots=True)
class SyntheticWorld:
    """Inputs ``0 .. support_size - 1`` with their marginal, teacher outputs and a fixed predictor."""

    marginal: np.ndarray
    teacher_table: np.ndarray
    predictor_table: np.ndarray

    def __post_init__(self) -> None:
        marginal = _check_rows(self.marginal, "marginal")
        teacher = _check_rows(self.teacher_table, "teacher_table")
        predictor = _check_rows(self.predictor_table, "predictor_table")
        if marginal.ndim != 1 or marginal.size == 0:
            raise ValueError("marginal must be a non-empty probability vector")
        if teacher.ndim != 2 or teacher.shape[0] != marginal.size:
            raise ValueError(f"teacher_table must have shape ({marginal.size}, C), got {teacher.shape}")
        if predictor.shape != teacher.shape:
            raise ValueError(f"predictor_table must match teacher_table shape {teacher.shape}, got {predictor.shape}")
        object.__setattr__(self, "marginal", marginal)
        object.__setattr__(self, "teacher_table", teacher)
        object.__setattr__(self, "predictor_table", predictor)

    @property
    def support_size(self) -> int:
        return int(self.marginal.size)

    @property
    def num_classes(self) -> int:
        return int(self.teacher_table.shape[1])


def random_world(
    support_size: int, num_classes: int, rng: np.random.Generator, concentration: float = 1.0
) -> SyntheticWorld:
    """Dirichlet-drawn marginal, teacher and predictor tables."""
    if support_size < 1 or num_classes < 2:
        raise ValueError(f"need support_size >= 1 and num_classes >= 2, got {support_size}, {num_classes}")
    marginal = rng.dirichlet(np.full(support_size, concentration))
    teacher = rng.dirichlet(np.full(num_classes, concentration), size=support_size)
    predictor = rng.dirichlet(np.full(num_classes, concentration), size=support_size)
    return SyntheticWorld(marginal, teacher, predictor)


@dataclass(frozen=True, slots=True)
class GapMoments:
    mean_delta: float
    se_delta: float
    mean_delta_sq: float
    se_delta_sq: float


@dataclass(frozen=True, slots=True)
class ExactGapMoments:
    """Exact moments; ``variance == var_term + cov_term`` up to rounding."""

    mean_delta: float
    mean_delta_sq: float
    variance: float
    var_term: float
    cov_term: float


def q_values(world: SyntheticWorld) -> np.ndarray:
    """``q(x) = -teacher(x) . log predictor(x)`` for every support point."""
    t = world.teacher_table
    positive = t > 0
    return -np.where(positive, t * clamped_log(world.predictor_table, where=positive), 0.0).sum(axis=1)


def true_distilled_risk(world: SyntheticWorld) -> float:
    """Expected ``q(x)`` under the marginal.

    Args:
        world: Finite world with marginal, teacher and predictor tables.

    Returns:
        ``sum_x marginal(x) q(x)``.
    """
    return float(world.marginal @ q_values(world))


def q_variance(world: SyntheticWorld) -> float:
    """Variance of ``q(x)`` under the marginal (population form)."""
    q = q_values(world)
    return float(world.marginal @ (q - world.marginal @ q) ** 2)


def _check_chain(n: int, rho: float) -> None:
    if n < 1:
        raise ValueError(f"N must be >= 1, got {n}")
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"rho must lie in [0, 1), got {rho}")


def transition_matrix(world: SyntheticWorld, rho: float) -> np.ndarray:
    """Copy-chain kernel ``rho I + (1 - rho) 1 marginal^T``."""
    s = world.support_size
    return rho * np.eye(s) + (1.0 - rho) * np.tile(world.marginal, (s, 1))


def pairwise_covariance(world: SyntheticWorld, rho: float, lag: int) -> float:
    """``Cov[q(x_j), q(x_{j+lag})] = rho^lag Var[q]``."""
    if lag < 0:
        raise ValueError(f"lag must be >= 0, got {lag}")
    return rho**lag * q_variance(world)


def sample_sequences(world: SyntheticWorld, N: int, rho: float, M: int, rng: np.random.Generator) -> np.ndarray:
    """``M`` independent copy-chain sequences of length ``N``, shape (M, N)."""
    _check_chain(N, rho)
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    fresh = rng.choice(world.support_size, size=(M, N), p=world.marginal)
    restart = rng.random((M, N)) >= rho
    restart[:, 0] = True
    # Each position reads the fresh draw of the latest restart at or before it.
    source = np.maximum.accumulate(np.where(restart, np.arange(N), 0), axis=1)
    return np.take_along_axis(fresh, source, axis=1)


def sample_sequence(world: SyntheticWorld, N: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    """One copy-chain sequence of support indices.

    Args:
        world: Supplies the stationary marginal.
        N: Sequence length.
        rho: Probability of repeating the previous input, in ``[0, 1)``.
        rng: Source of randomness.

    Returns:
        Integer array of shape ``(N,)``; every position has the marginal as its distribution.
    """
    return sample_sequences(world, N, rho, 1, rng)[0]


def estimate_gap_moments(
    world: SyntheticWorld, N: int, rho: float, M: int, rng: np.random.Generator
) -> GapMoments:
    """Monte Carlo means (with standard errors) of the gap and its square over ``M`` sequences."""
    if M < MIN_REPETITIONS:
        raise ValueError(f"M must be >= {MIN_REPETITIONS}, got {M}")
    q = q_values(world)
    delta = q[sample_sequences(world, N, rho, M, rng)].mean(axis=1) - float(world.marginal @ q)
    sq = delta * delta
    root_m = math.sqrt(M)
    return GapMoments(
        mean_delta=float(delta.mean()),
        se_delta=float(delta.std(ddof=1) / root_m),
        mean_delta_sq=float(sq.mean()),
        se_delta_sq=float(sq.std(ddof=1) / root_m),
    )


def _cov_term(world: SyntheticWorld, N: int, rho: float) -> float:
    """``(2 / N^2) sum_{j<k} Cov[q(x_j), q(x_k)]`` from the chain's exact pairwise joints."""
    q = q_values(world)
    mean_q = float(world.marginal @ q)
    kernel = transition_matrix(world, rho)
    step = np.eye(world.support_size)
    total = 0.0
    for lag in range(1, N):
        step = step @ kernel
        joint = world.marginal[:, None] * step
        total += (N - lag) * (float(q @ joint @ q) - mean_q * mean_q)
    return 2.0 * total / (N * N)


def exact_gap_moments(world: SyntheticWorld, N: int, rho: float) -> ExactGapMoments:
    """Enumerate every length-``N`` sequence with its chain probability.

    Raises:
        EnumerationGuardError: If ``support_size ** N`` exceeds ``ENUMERATION_LIMIT``.
    """
    _check_chain(N, rho)
    s = world.support_size
    count = s**N
    if count > ENUMERATION_LIMIT:
        raise EnumerationGuardError(f"{s}^{N} = {count} sequences exceed the limit of {ENUMERATION_LIMIT}")
    seqs = np.stack(np.unravel_index(np.arange(count), (s,) * N), axis=1)
    kernel = transition_matrix(world, rho)
    prob = world.marginal[seqs[:, 0]]
    for i in range(1, N):
        prob = prob * kernel[seqs[:, i - 1], seqs[:, i]]
    q = q_values(world)
    delta = q[seqs].mean(axis=1) - float(world.marginal @ q)
    mean_delta = float(prob @ delta)
    result = ExactGapMoments(
        mean_delta=mean_delta,
        mean_delta_sq=float(prob @ (delta * delta)),
        variance=float(prob @ (delta - mean_delta) ** 2),
        var_term=q_variance(world) / N,
        cov_term=_cov_term(world, N, rho),
    )
    logger.debug("enumerated %d sequences (N=%d, rho=%g)", count, N, rho)
    return result


def closed_form_gap_moments(world: SyntheticWorld, N: int, rho: float) -> ExactGapMoments:
    """Exact moments without enumeration, from ``Cov = rho^lag Var[q]``; usable for any ``N``."""
    _check_chain(N, rho)
    var = q_variance(world)
    var_term = var / N
    cov_term = 2.0 * var * sum((N - lag) * rho**lag for lag in range(1, N)) / (N * N)
    total = var_term + cov_term
    return ExactGapMoments(0.0, total, total, var_term, cov_term)


def exact_or_closed_form(world: SyntheticWorld, N: int, rho: float, limit: Optional[int] = None) -> ExactGapMoments:
    """Enumerate when the sequence count allows, otherwise fall back to the closed form."""
    limit = ENUMERATION_LIMIT if limit is None else limit
    if world.support_size**N <= limit:
        return exact_gap_moments(world, N, rho)
    return closed_form_gap_moments(world, N, rho)


__all__ = [
    "ENUMERATION_LIMIT",
    "EnumerationGuardError",
    "SyntheticWorld",
    "GapMoments",
    "ExactGapMoments",
    "random_world",
    "q_values",
    "true_distilled_risk",
    "q_variance",
    "transition_matrix",
    "pairwise_covariance",
    "sample_sequence",
    "sample_sequences",
    "estimate_gap_moments",
    "exact_gap_moments",
    "closed_form_gap_moments",
    "exact_or_closed_form",
]
