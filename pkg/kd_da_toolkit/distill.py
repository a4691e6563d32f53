"""Knowledge-distillation losses, CutMixPick selection and the teacher/student training loops.

Every training step sees a composed batch: the (flip + crop augmented) originals,
trained with cross-entropy plus the temperature-scaled KL term, followed by one
augmented copy per original that is trained with the KL term only.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from .augment import ComposedBatch, DAScheme, LossMode, compose_batch, standard_augment
from .data import Dataset, LabeledBatch, batches
from .losses import clamped_log, cross_entropy, cross_entropy_objective, entropy_rows, kl_divergence, softmax_temp
from .metrics import eval_test_loss
from .nn import Model, ScheduleConfig, backward, lr_at, sgd_step
from .tensor import Tensor, log_softmax

logger = logging.getLogger(__name__)

SCORERS = ("teacher_entropy", "student_entropy")
PICK_ORDERS = ("highest", "lowest")


class LogitModel(Protocol):
    def logits(self, images: np.ndarray) -> np.ndarray: ...


class ProbabilityModel(Protocol):
    def predict_proba(self, images: np.ndarray, tau: float = 1.0) -> np.ndarray: ...


@dataclass(frozen=True, slots=True)
class PickConfig:
    """Keep a ``ratio_r`` share of the augmented half, ranked by the scorer's output entropy."""

    ratio_r: float = 0.5
    scorer: str = "teacher_entropy"
    order: str = "highest"

    def __post_init__(self) -> None:
        if not 0.0 < self.ratio_r <= 1.0:
            raise ValueError(f"ratio_r must lie in (0, 1], got {self.ratio_r}")
        if self.scorer not in SCORERS:
            raise ValueError(f"scorer must be one of {SCORERS}, got '{self.scorer}'")
        if self.order not in PICK_ORDERS:
            raise ValueError(f"order must be one of {PICK_ORDERS}, got '{self.order}'")


@dataclass(frozen=True, slots=True)
class TrainConfig:
    """Optimisation settings shared by teacher training and distillation."""

    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    batch_size: int = 64
    seed: int = 0
    momentum: float = 0.9
    weight_decay: float = 5e-4
    crop_pad: int = 4

    def __post_init__(self) -> None:
        _check_train_fields(self)


@dataclass(frozen=True, slots=True)
class DistillConfig:
    tau: float = 4.0
    alpha: float = 0.9
    scheme: DAScheme = field(default_factory=DAScheme)
    pick: Optional[PickConfig] = None
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    batch_size: int = 64
    seed: int = 0
    momentum: float = 0.9
    weight_decay: float = 5e-4
    crop_pad: int = 4

    def __post_init__(self) -> None:
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        _check_train_fields(self)


def _check_train_fields(cfg: Union[TrainConfig, DistillConfig]) -> None:
    if cfg.batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {cfg.batch_size}")
    if cfg.seed < 0:
        raise ValueError(f"seed must be >= 0, got {cfg.seed}")
    if not 0.0 <= cfg.momentum < 1.0:
        raise ValueError(f"momentum must lie in [0, 1), got {cfg.momentum}")
    if cfg.weight_decay < 0:
        raise ValueError(f"weight_decay must be >= 0, got {cfg.weight_decay}")
    if cfg.crop_pad < 0:
        raise ValueError(f"crop_pad must be >= 0, got {cfg.crop_pad}")


@dataclass(slots=True)
class RiskReport:
    """Student risks after one epoch; ``q_values`` holds ``-p_t(x) . log f(x)`` per training sample."""

    epoch: int
    empirical_risk: float
    distilled_risk: float
    test_loss: float
    test_accuracy: float
    q_values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        values = (self.empirical_risk, self.distilled_risk, self.test_loss, self.test_accuracy)
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"risk report holds non-finite values: {values}")
        if not 0.0 <= self.test_accuracy <= 1.0:
            raise ValueError(f"test_accuracy must lie in [0, 1], got {self.test_accuracy}")

    def to_dict(self) -> Dict[str, float]:
        return {
            "epoch": self.epoch,
            "empirical_risk": self.empirical_risk,
            "distilled_risk": self.distilled_risk,
            "test_loss": self.test_loss,
            "test_accuracy": self.test_accuracy,
        }


@dataclass(frozen=True, slots=True)
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    train_accuracy: float
    test_loss: float
    test_accuracy: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def _check_alpha_tau(alpha: float, tau: float) -> None:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")


# -- losses --------------------------------------------------------------------


def kd_loss(
    y: Union[int, np.ndarray], logits_s: np.ndarray, logits_t: np.ndarray, alpha: float = 0.9, tau: float = 4.0
) -> float:
    """``(1 - alpha) CE(y, softmax(s)) + alpha tau^2 KL(softmax(t / tau) || softmax(s / tau))``.

    Rows of 2-D logits are averaged. Teacher logits are plain arrays, so nothing
    flows back into the teacher.
    """
    _check_alpha_tau(alpha, tau)
    logits_s = np.asarray(logits_s, dtype=np.float64)
    logits_t = np.asarray(logits_t, dtype=np.float64)
    if logits_s.shape != logits_t.shape:
        raise ValueError(f"student and teacher logits differ in shape: {logits_s.shape} vs {logits_t.shape}")
    ce = cross_entropy(y, softmax_temp(logits_s, 1.0))
    return (1.0 - alpha) * ce + kl_only_loss(logits_s, logits_t, tau, alpha)


def kl_only_loss(logits_s: np.ndarray, logits_t: np.ndarray, tau: float = 4.0, alpha: float = 0.9) -> float:
    """The ``alpha tau^2 KL`` part of :func:`kd_loss`; the whole loss of an augmented sample."""
    _check_alpha_tau(alpha, tau)
    logits_s = np.asarray(logits_s, dtype=np.float64)
    logits_t = np.asarray(logits_t, dtype=np.float64)
    if logits_s.shape != logits_t.shape:
        raise ValueError(f"student and teacher logits differ in shape: {logits_s.shape} vs {logits_t.shape}")
    return alpha * tau * tau * kl_divergence(softmax_temp(logits_t, tau), softmax_temp(logits_s, tau))


def weighted_kd_objective(
    student_logits: Tensor,
    teacher_probs_tau: np.ndarray,
    labels: np.ndarray,
    ce_weights: np.ndarray,
    kl_weights: np.ndarray,
    tau: float,
) -> Tensor:
    """``sum_i ce_w[i] CE_i + kl_w[i] KL_i`` as a differentiable scalar."""
    p_t = np.asarray(teacher_probs_tau, dtype=np.float64)
    n, c = student_logits.shape
    if p_t.shape != (n, c):
        raise ValueError(f"teacher probabilities must have shape {(n, c)}, got {p_t.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    ce_w = np.zeros((n, c))
    ce_w[np.arange(n), labels] = np.asarray(ce_weights, dtype=np.float64)
    kl_w = np.asarray(kl_weights, dtype=np.float64)[:, None] * p_t
    positive = p_t > 0
    neg_entropy = float(np.sum(kl_w * np.log(np.where(positive, p_t, 1.0))))
    ce_part = (log_softmax(student_logits, 1.0) * Tensor(-ce_w)).sum()
    kl_part = (log_softmax(student_logits, tau) * Tensor(-kl_w)).sum()
    return ce_part + kl_part + neg_entropy


def distill_objective(
    student_logits: Tensor,
    teacher_probs_tau: np.ndarray,
    labels: np.ndarray,
    loss_mode: np.ndarray,
    alpha: float,
    tau: float,
) -> Tensor:
    """Composed-batch loss: CE averaged over the CE_PLUS_KL rows, KL averaged over every retained row.

    Under identity composition this is plain KD on the original half, gradients included.
    """
    _check_alpha_tau(alpha, tau)
    loss_mode = np.asarray(loss_mode)
    n = student_logits.shape[0]
    if n == 0:
        raise ValueError("cannot compute a loss over zero samples")
    ce_rows = loss_mode == LossMode.CE_PLUS_KL
    n_ce = int(ce_rows.sum())
    ce_weights = np.where(ce_rows, (1.0 - alpha) / max(n_ce, 1), 0.0)
    kl_weights = np.full(n, alpha * tau * tau / n)
    return weighted_kd_objective(student_logits, teacher_probs_tau, labels, ce_weights, kl_weights, tau)


def q_values(teacher_probs: np.ndarray, student_probs: np.ndarray) -> np.ndarray:
    """Per-sample ``-p_t(x) . log f(x)``."""
    p_t = np.atleast_2d(np.asarray(teacher_probs, dtype=np.float64))
    f = np.atleast_2d(np.asarray(student_probs, dtype=np.float64))
    if p_t.shape != f.shape:
        raise ValueError(f"teacher and student probabilities differ in shape: {p_t.shape} vs {f.shape}")
    positive = p_t > 0
    return -np.where(positive, p_t * clamped_log(f, where=positive), 0.0).sum(axis=1)


def empirical_distilled_risk(teacher_probs: np.ndarray, student_probs: np.ndarray) -> float:
    """``-(1/N) sum_n p_t(x_n) . log f(x_n)``."""
    return float(q_values(teacher_probs, student_probs).mean())


# -- CutMixPick ----------------------------------------------------------------


def pick_by_entropy(entropies: Sequence[float], ratio_r: float, order: str = "highest") -> np.ndarray:
    """Indices of the ``ceil(r B)`` highest (or lowest) entropies, ties to the lower index, sorted ascending."""
    h = np.asarray(entropies, dtype=np.float64)
    b = h.size
    if b == 0:
        raise ValueError("cannot pick from an empty set of samples")
    if not 0.0 < ratio_r <= 1.0:
        raise ValueError(f"ratio_r must lie in (0, 1], got {ratio_r}")
    if order not in PICK_ORDERS:
        raise ValueError(f"order must be one of {PICK_ORDERS}, got '{order}'")
    # round() keeps r * B = 3.0000000000000004 from becoming 4.
    k = max(1, math.ceil(round(ratio_r * b, 9)))
    key = -h if order == "highest" else h
    ranked = np.lexsort((np.arange(b), key))
    return np.sort(ranked[:k])


def cutmix_pick(scorer_probs: np.ndarray, ratio_r: float, order: str = "highest") -> np.ndarray:
    """Select augmented samples by the entropy of the scorer's probability rows."""
    probs = np.atleast_2d(np.asarray(scorer_probs, dtype=np.float64))
    if probs.shape[0] == 0:
        raise ValueError("cannot pick from an empty set of samples")
    return pick_by_entropy(entropy_rows(probs), ratio_r, order)


# -- composed stream -----------------------------------------------------------


def iter_composed(
    dataset: Dataset,
    config: DistillConfig,
    epoch: int,
    teacher: Optional[ProbabilityModel] = None,
    student: Optional[ProbabilityModel] = None,
) -> Iterator[ComposedBatch]:
    """The epoch's composed (and, with a pick config, picked) batches in training order.

    With the ``student_entropy`` scorer the student is queried lazily, so a
    consumer that updates the student between batches gets live scores.
    """
    pick = config.pick
    scorer: Optional[ProbabilityModel] = None
    if pick is not None:
        scorer = teacher if pick.scorer == "teacher_entropy" else student
        if scorer is None:
            raise ValueError(f"pick scorer '{pick.scorer}' needs its model")
    rng = np.random.default_rng([config.seed, epoch, 1])
    for batch in batches(dataset, config.batch_size, config.seed, epoch):
        images = standard_augment(batch.images, rng, config.crop_pad)
        composed = compose_batch(LabeledBatch(images, batch.labels, batch.indices), config.scheme, rng)
        if pick is not None and scorer is not None:
            aug = composed.augmented_indices
            keep = cutmix_pick(scorer.predict_proba(composed.images[aug], 1.0), pick.ratio_r, pick.order)
            composed = composed.select_augmented(keep)
        yield composed


# -- training ------------------------------------------------------------------


def _epoch_log(model: Model, train: Dataset, test: Dataset, epoch: int, lr: float, train_loss: float) -> EpochLog:
    _, train_acc = eval_test_loss(model, train)
    test_loss, test_acc = eval_test_loss(model, test)
    return EpochLog(epoch, lr, train_loss, train_acc, test_loss, test_acc)


def train_teacher(
    model: Model, train: Dataset, test: Optional[Dataset] = None, config: Optional[TrainConfig] = None
) -> Tuple[Model, List[EpochLog]]:
    """Plain cross-entropy training with per-sample flip + crop."""
    config = config if config is not None else TrainConfig()
    test = test if test is not None else train
    if model.num_classes != train.class_count:
        raise ValueError(f"model has {model.num_classes} outputs but the dataset {train.class_count} classes")
    history: List[EpochLog] = []
    for epoch in range(config.schedule.epochs):
        lr = lr_at(epoch, config.schedule)
        rng = np.random.default_rng([config.seed, epoch, 1])
        total, seen = 0.0, 0
        for batch in batches(train, config.batch_size, config.seed, epoch):
            images = standard_augment(batch.images, rng, config.crop_pad)
            loss = cross_entropy_objective(model(images), batch.labels)
            grads = backward(model, loss)
            sgd_step([p.data for p in model.parameters()], grads, lr, config.momentum, config.weight_decay, buffers=model.buffers)
            total += loss.item() * len(batch)
            seen += len(batch)
        log = _epoch_log(model, train, test, epoch, lr, total / seen)
        history.append(log)
        logger.info(
            "teacher epoch %d lr=%.4g loss=%.4f train_acc=%.3f test_loss=%.4f test_acc=%.3f",
            epoch, lr, log.train_loss, log.train_accuracy, log.test_loss, log.test_accuracy,
        )
    return model, history


def risk_report(
    teacher: ProbabilityModel,
    student: ProbabilityModel,
    train: Dataset,
    test: Dataset,
    epoch: int = 0,
    *,
    teacher_train_probs: Optional[np.ndarray] = None,
) -> RiskReport:
    p_t = teacher_train_probs if teacher_train_probs is not None else teacher.predict_proba(train.images, 1.0)
    f = student.predict_proba(train.images, 1.0)
    q = q_values(p_t, f)
    test_loss, test_acc = eval_test_loss(student, test)
    return RiskReport(
        epoch=epoch,
        empirical_risk=cross_entropy(train.labels, f),
        distilled_risk=float(q.mean()),
        test_loss=test_loss,
        test_accuracy=test_acc,
        q_values=q,
    )


def distill_step(teacher: LogitModel, student: Model, composed: ComposedBatch, config: DistillConfig, lr: float) -> float:
    """One SGD step on a composed batch; returns the loss value."""
    p_t = softmax_temp(teacher.logits(composed.images), config.tau)
    loss = distill_objective(student(composed.images), p_t, composed.labels, composed.loss_mode, config.alpha, config.tau)
    grads = backward(student, loss)
    sgd_step([p.data for p in student.parameters()], grads, lr, config.momentum, config.weight_decay, buffers=student.buffers)
    return loss.item()


def train_student(
    teacher: Model,
    student: Model,
    train: Dataset,
    config: DistillConfig,
    test: Optional[Dataset] = None,
) -> Tuple[Model, List[RiskReport]]:
    """Distill ``teacher`` into ``student`` on composed batches; one :class:`RiskReport` per epoch.

    The teacher only ever runs under ``no_grad``; its parameters are never touched.
    """
    if teacher.num_classes != student.num_classes:
        raise ValueError(f"teacher has {teacher.num_classes} classes but student has {student.num_classes}")
    if student.num_classes != train.class_count:
        raise ValueError(f"models have {student.num_classes} outputs but the dataset {train.class_count} classes")
    test = test if test is not None else train
    history: List[RiskReport] = []
    epochs = config.schedule.epochs
    if epochs == 0:
        return student, history
    p_t_train = teacher.predict_proba(train.images, 1.0)
    for epoch in range(epochs):
        lr = lr_at(epoch, config.schedule)
        total, seen = 0.0, 0
        for composed in iter_composed(train, config, epoch, teacher, student):
            total += distill_step(teacher, student, composed, config, lr) * composed.size
            seen += composed.size
        report = risk_report(teacher, student, train, test, epoch, teacher_train_probs=p_t_train)
        history.append(report)
        logger.info(
            "student epoch %d lr=%.4g loss=%.4f distilled_risk=%.4f test_loss=%.4f test_acc=%.3f",
            epoch, lr, total / seen, report.distilled_risk, report.test_loss, report.test_accuracy,
        )
    return student, history


def mixed_label(labels: np.ndarray, partner_labels: np.ndarray, effective_ratio: np.ndarray) -> np.ndarray:
    """Argmax of the area-weighted label mix; an exact 50/50 mix resolves to the lower class index."""
    own = np.asarray(labels, dtype=np.int64)
    other = np.asarray(partner_labels, dtype=np.int64)
    ratio = np.asarray(effective_ratio, dtype=np.float64)
    return np.where(ratio > 0.5, own, np.where(ratio < 0.5, other, np.minimum(own, other)))


def label_disagreement_rate(teacher: LogitModel, stream: Iterable[ComposedBatch]) -> float:
    """Share of mixed augmented samples whose teacher argmax differs from the mix-assigned label.

    Raises:
        ValueError: If the stream holds no mixed samples.
    """
    disagree, total = 0, 0
    for composed in stream:
        mixed = np.flatnonzero((composed.loss_mode == LossMode.KL_ONLY) & (composed.partner >= 0))
        if mixed.size == 0:
            continue
        assigned = mixed_label(composed.labels[mixed], composed.partner_labels[mixed], composed.effective_ratio[mixed])
        predicted = np.argmax(teacher.logits(composed.images[mixed]), axis=1)
        disagree += int(np.count_nonzero(predicted != assigned))
        total += mixed.size
    if total == 0:
        raise ValueError("the stream holds no mixed samples")
    return disagree / total


__all__ = [
    "PickConfig",
    "TrainConfig",
    "DistillConfig",
    "RiskReport",
    "EpochLog",
    "kd_loss",
    "kl_only_loss",
    "weighted_kd_objective",
    "distill_objective",
    "q_values",
    "empirical_distilled_risk",
    "pick_by_entropy",
    "cutmix_pick",
    "iter_composed",
    "train_teacher",
    "train_student",
    "distill_step",
    "risk_report",
    "mixed_label",
    "label_disagreement_rate",
]
