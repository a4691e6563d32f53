"""Augmentation kernels and the KD batch composition (originals + augmented copies).

Every kernel works on a single image of shape (channels, H, W) unless noted,
takes its randomness from an explicit ``numpy.random.Generator`` and never
mutates its inputs.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional, Sequence, Tuple

import numpy as np

from .data import LabeledBatch

logger = logging.getLogger(__name__)

SCHEME_KINDS = ("identity", "flip", "flip_crop", "cutout", "mixup", "cutmix", "constant")


class LossMode(IntEnum):
    CE_PLUS_KL = 0
    KL_ONLY = 1


@dataclass(frozen=True, slots=True)
class DAScheme:
    """Which augmentation produces the second half of a composed batch."""

    kind: str = "identity"
    cutout_length: int = 8
    mix_alpha: float = 1.0
    crop_pad: int = 4
    fixed_lambda: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind not in SCHEME_KINDS:
            raise ValueError(f"unknown augmentation kind '{self.kind}', expected one of {SCHEME_KINDS}")
        if self.cutout_length <= 0:
            raise ValueError(f"cutout_length must be positive, got {self.cutout_length}")
        if self.mix_alpha <= 0:
            raise ValueError(f"mix_alpha must be positive, got {self.mix_alpha}")
        if self.crop_pad < 0:
            raise ValueError(f"crop_pad must be >= 0, got {self.crop_pad}")
        if self.fixed_lambda is not None and not 0.0 <= self.fixed_lambda <= 1.0:
            raise ValueError(f"fixed_lambda must lie in [0, 1], got {self.fixed_lambda}")

    @property
    def mixes(self) -> bool:
        return self.kind in ("mixup", "cutmix")


@dataclass(frozen=True, slots=True)
class MixParams:
    """One draw of a Mixup/CutMix interpolation. ``box`` is (x0, y0, w, h) after clipping, CutMix only."""

    lam: float
    partner_index: int
    box: Optional[Tuple[int, int, int, int]] = None


@dataclass(slots=True)
class ComposedBatch:
    """Originals (CE + KL) followed by their augmented copies (KL only)."""

    images: np.ndarray
    labels: np.ndarray
    loss_mode: np.ndarray
    partner: np.ndarray
    partner_labels: np.ndarray
    effective_ratio: np.ndarray

    def __post_init__(self) -> None:
        n = self.images.shape[0]
        for name in ("labels", "loss_mode", "partner", "partner_labels", "effective_ratio"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"ComposedBatch.{name} must have {n} entries")

    @property
    def size(self) -> int:
        return int(self.images.shape[0])

    @property
    def original_count(self) -> int:
        return int(np.count_nonzero(self.loss_mode == LossMode.CE_PLUS_KL))

    @property
    def augmented_indices(self) -> np.ndarray:
        return np.flatnonzero(self.loss_mode == LossMode.KL_ONLY)

    def select_augmented(self, keep: Sequence[int]) -> "ComposedBatch":
        """Keep every original and only the augmented samples at positions ``keep`` (0-based within the augmented half)."""
        aug = self.augmented_indices
        keep = np.asarray(keep, dtype=np.int64)
        if keep.size and (keep.min() < 0 or keep.max() >= aug.size):
            raise ValueError(f"augmented positions must lie in [0, {aug.size})")
        rows = np.concatenate([np.flatnonzero(self.loss_mode == LossMode.CE_PLUS_KL), aug[keep]])
        return ComposedBatch(
            images=self.images[rows],
            labels=self.labels[rows],
            loss_mode=self.loss_mode[rows],
            partner=self.partner[rows],
            partner_labels=self.partner_labels[rows],
            effective_ratio=self.effective_ratio[rows],
        )


def _check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ValueError(f"image must have shape (channels, H, W), got {image.shape}")
    return image


def _require_rng(rng: Optional[np.random.Generator], what: str) -> np.random.Generator:
    if rng is None:
        raise ValueError(f"{what} needs a seeded generator when no explicit position is given")
    return rng


def hflip(image: np.ndarray, p: float = 0.5, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Reverse the width axis with probability ``p``."""
    image = _check_image(image)
    if p <= 0:
        return image.copy()
    if p >= 1 or _require_rng(rng, "hflip").random() < p:
        return image[:, :, ::-1].copy()
    return image.copy()


def pad_crop(
    image: np.ndarray,
    pad: int = 4,
    rng: Optional[np.random.Generator] = None,
    *,
    offset: Optional[Tuple[int, int]] = None,
) -> np.ndarray:
    """Zero-pad by ``pad`` on every side, then take an H x W window at a random (or given) (row, col) offset."""
    image = _check_image(image)
    if pad < 0:
        raise ValueError(f"pad must be >= 0, got {pad}")
    if pad == 0:
        return image.copy()
    _, h, w = image.shape
    padded = np.pad(image, ((0, 0), (pad, pad), (pad, pad)))
    if offset is None:
        rng = _require_rng(rng, "pad_crop")
        offset = (int(rng.integers(0, 2 * pad + 1)), int(rng.integers(0, 2 * pad + 1)))
    top, left = offset
    if not (0 <= top <= 2 * pad and 0 <= left <= 2 * pad):
        raise ValueError(f"crop offset {offset} outside [0, {2 * pad}]")
    return padded[:, top : top + h, left : left + w].copy()


def cutout(
    image: np.ndarray,
    length: int,
    rng: Optional[np.random.Generator] = None,
    *,
    center: Optional[Tuple[int, int]] = None,
) -> np.ndarray:
    """Zero a ``length`` x ``length`` square around a uniform (or given) (row, col) center, clipped at the borders."""
    image = _check_image(image)
    _, h, w = image.shape
    if not 0 < length <= min(h, w):
        raise ValueError(f"cutout length must lie in (0, {min(h, w)}], got {length}")
    if center is None:
        rng = _require_rng(rng, "cutout")
        center = (int(rng.integers(h)), int(rng.integers(w)))
    cy, cx = center
    top, left = cy - length // 2, cx - length // 2
    y0, y1 = np.clip(top, 0, h), np.clip(top + length, 0, h)
    x0, x1 = np.clip(left, 0, w), np.clip(left + length, 0, w)
    out = image.copy()
    out[:, y0:y1, x0:x1] = 0.0
    return out


def mixup(x_i: np.ndarray, x_j: np.ndarray, lam: float) -> np.ndarray:
    """``lam * x_i + (1 - lam) * x_j`` elementwise."""
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    if x_i.shape != x_j.shape:
        raise ValueError(f"mixup inputs must share a shape, got {x_i.shape} and {x_j.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    return lam * x_i + (1.0 - lam) * x_j


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def cutmix_box(
    h: int,
    w: int,
    lam: float,
    rng: Optional[np.random.Generator] = None,
    *,
    center: Optional[Tuple[int, int]] = None,
) -> Tuple[int, int, int, int]:
    """Clipped CutMix box (x0, y0, width, height) covering a ``1 - lam`` share of the image before clipping."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    side = math.sqrt(1.0 - lam)
    cut_w, cut_h = _round_half_up(w * side), _round_half_up(h * side)
    if center is None:
        rng = _require_rng(rng, "cutmix_box")
        center = (int(rng.integers(h)), int(rng.integers(w)))
    cy, cx = center
    x0, y0 = cx - cut_w // 2, cy - cut_h // 2
    x1, y1 = x0 + cut_w, y0 + cut_h
    x0, x1 = int(np.clip(x0, 0, w)), int(np.clip(x1, 0, w))
    y0, y1 = int(np.clip(y0, 0, h)), int(np.clip(y1, 0, h))
    return x0, y0, x1 - x0, y1 - y0


def paste_box(x_i: np.ndarray, x_j: np.ndarray, box: Tuple[int, int, int, int]) -> Tuple[np.ndarray, float]:
    x0, y0, bw, bh = box
    _, h, w = x_i.shape
    out = x_i.copy()
    out[:, y0 : y0 + bh, x0 : x0 + bw] = x_j[:, y0 : y0 + bh, x0 : x0 + bw]
    return out, 1.0 - (bw * bh) / float(h * w)


def cutmix(
    x_i: np.ndarray,
    x_j: np.ndarray,
    lam: float,
    rng: Optional[np.random.Generator] = None,
    *,
    center: Optional[Tuple[int, int]] = None,
) -> Tuple[np.ndarray, float]:
    """Paste a box of ``x_j`` into ``x_i``; returns the image and the share of ``x_i`` left visible."""
    x_i = _check_image(x_i)
    x_j = _check_image(x_j)
    if x_i.shape != x_j.shape:
        raise ValueError(f"cutmix inputs must share a shape, got {x_i.shape} and {x_j.shape}")
    _, h, w = x_i.shape
    return paste_box(x_i, x_j, cutmix_box(h, w, lam, rng, center=center))


def sample_mix_lambda(alpha: float, rng: np.random.Generator) -> float:
    """Draw from Beta(alpha, alpha)."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return float(rng.beta(alpha, alpha))


def standard_augment(images: np.ndarray, rng: np.random.Generator, crop_pad: int = 4) -> np.ndarray:
    """Per-sample random horizontal flip followed by random pad-and-crop."""
    images = np.asarray(images, dtype=np.float64)
    return np.stack([pad_crop(hflip(img, 0.5, rng), crop_pad, rng) for img in images]) if len(images) else images.copy()


def apply_scheme(
    images: np.ndarray, scheme: DAScheme, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, Optional[MixParams]]:
    """Augment a batch; returns (images, partner index per sample, effective ratio per sample, mix draw).

    Mixup and CutMix draw one lambda (and, for CutMix, one box) per batch; partners come
    from a uniform random permutation, so a sample may be paired with itself.
    """
    n = images.shape[0]
    partner = np.full(n, -1, dtype=np.int64)
    ratio = np.ones(n)
    kind = scheme.kind
    if kind == "identity":
        return images.copy(), partner, ratio, None
    if kind == "flip":
        return np.stack([hflip(img, 0.5, rng) for img in images]), partner, ratio, None
    if kind == "flip_crop":
        return np.stack([pad_crop(hflip(img, 0.5, rng), scheme.crop_pad, rng) for img in images]), partner, ratio, None
    if kind == "cutout":
        _, _, h, w = images.shape
        length = min(scheme.cutout_length, h, w)
        return np.stack([cutout(img, length, rng) for img in images]), partner, ratio, None
    if kind == "constant":
        return np.full_like(images, images.mean()), partner, ratio, None

    perm = rng.permutation(n)
    lam = scheme.fixed_lambda if scheme.fixed_lambda is not None else sample_mix_lambda(scheme.mix_alpha, rng)
    if kind == "mixup":
        out = np.stack([mixup(images[i], images[perm[i]], lam) for i in range(n)])
        return out, perm.astype(np.int64), np.full(n, lam), MixParams(lam, -1)
    _, _, h, w = images.shape
    box = cutmix_box(h, w, lam, rng)
    mixed = [paste_box(images[i], images[perm[i]], box) for i in range(n)]
    out = np.stack([m[0] for m in mixed])
    ratio = np.array([m[1] for m in mixed])
    return out, perm.astype(np.int64), ratio, MixParams(lam, -1, box)


def compose_batch(batch: LabeledBatch, scheme: DAScheme, rng: np.random.Generator) -> ComposedBatch:
    """Append an augmented copy of every sample; originals keep CE + KL, copies get KL only.

    The augmented copies keep their source labels for bookkeeping only; no
    augmentation-assigned label ever enters the loss.
    """
    images = np.asarray(batch.images, dtype=np.float64)
    b = images.shape[0]
    if b == 0:
        raise ValueError("cannot compose an empty batch")
    aug, partner, ratio, draw = apply_scheme(images, scheme, rng)
    if draw is not None:
        logger.debug("%s draw: lambda=%.4f box=%s", scheme.kind, draw.lam, draw.box)
    labels = np.asarray(batch.labels, dtype=np.int64)
    partner_labels = np.where(partner >= 0, labels[np.maximum(partner, 0)], -1)
    return ComposedBatch(
        images=np.concatenate([images, aug]),
        labels=np.concatenate([labels, labels]),
        loss_mode=np.concatenate([np.full(b, LossMode.CE_PLUS_KL), np.full(b, LossMode.KL_ONLY)]).astype(np.int64),
        partner=np.concatenate([np.full(b, -1, dtype=np.int64), partner]),
        partner_labels=np.concatenate([np.full(b, -1, dtype=np.int64), partner_labels]),
        effective_ratio=np.concatenate([np.ones(b), ratio]),
    )


__all__ = [
    "SCHEME_KINDS",
    "LossMode",
    "DAScheme",
    "MixParams",
    "ComposedBatch",
    "hflip",
    "pad_crop",
    "cutout",
    "mixup",
    "cutmix",
    "cutmix_box",
    "sample_mix_lambda",
    "standard_augment",
    "apply_scheme",
    "compose_batch",
]
