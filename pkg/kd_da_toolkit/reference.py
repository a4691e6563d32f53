"""Published full-scale CIFAR100 numbers for four teacher/student pairs.

``t_stddev`` values are scaled by 1e3. They are reference data for comparison and
for regression-testing :func:`~kd_da_toolkit.stats.pearson`, not something the
desk-scale pipeline reproduces.
"""
from __future__ import annotations

from typing import Dict, List, NamedTuple, Tuple

from .stats import CorrelationReport, pearson

REFERENCE_SCHEMES = (
    "identity",
    "flip",
    "flip_crop",
    "cutout",
    "autoaugment",
    "mixup",
    "cutmix",
    "cutmix_pick_student",
    "cutmix_pick",
)

# Mean T. stddev (x1e3) of a teacher under a constant (all inputs identical) augmentation.
CONSTANT_DA_T_STDDEV = 22.439

_TEACHER_T_STDDEV: Dict[str, Tuple[float, ...]] = {
    "wrn_40_2": (5.473, 5.471, 5.410, 5.255, 5.110, 4.988, 4.719, 4.400, 4.154),
    "resnet56": (5.248, 5.232, 5.121, 4.983, 4.904, 4.719, 4.443, 4.039, 3.788),
}

_STUDENT_TEST_LOSS: Dict[Tuple[str, str], Tuple[float, ...]] = {
    ("wrn_40_2", "wrn_16_2"): (1.0976, 1.0774, 1.0837, 1.0564, 1.0305, 1.0486, 1.0275, 1.0054, 0.9746),
    ("wrn_40_2", "vgg8"): (1.1830, 1.1673, 1.1446, 1.1306, 1.1102, 1.0917, 1.0657, 1.0471, 0.9928),
    ("resnet56", "resnet20"): (1.1783, 1.1668, 1.1763, 1.1687, 1.1478, 1.1621, 1.1440, 1.1269, 1.0924),
    ("resnet56", "ShuffleV2"): (0.9785, 0.9961, 0.9736, 0.9541, 0.9355, 0.9703, 0.9348, 0.9339, 0.9038),
}


class ReferenceRow(NamedTuple):
    scheme: str
    teacher: str
    t_stddev: float
    student: str
    test_loss: float


def reference_pairs() -> List[Tuple[str, str]]:
    """(teacher, student) pairs with reference numbers."""
    return list(_STUDENT_TEST_LOSS)


def reference_table() -> List[ReferenceRow]:
    """One row per (pair, scheme), pairs in insertion order and schemes in ``REFERENCE_SCHEMES`` order."""
    rows = []
    for (teacher, student), losses in _STUDENT_TEST_LOSS.items():
        stddevs = _TEACHER_T_STDDEV[teacher]
        rows.extend(
            ReferenceRow(scheme, teacher, sd, student, loss)
            for scheme, sd, loss in zip(REFERENCE_SCHEMES, stddevs, losses)
        )
    return rows


def reference_correlation(teacher: str, student: str) -> CorrelationReport:
    """Pearson correlation of T. stddev and student test loss over the nine schemes of one pair."""
    if (teacher, student) not in _STUDENT_TEST_LOSS:
        raise ValueError(f"no reference numbers for teacher '{teacher}' and student '{student}'")
    rows = [r for r in reference_table() if r.teacher == teacher and r.student == student]
    return pearson([r.t_stddev for r in rows], [r.test_loss for r in rows])


__all__ = [
    "REFERENCE_SCHEMES",
    "CONSTANT_DA_T_STDDEV",
    "ReferenceRow",
    "reference_pairs",
    "reference_table",
    "reference_correlation",
]
