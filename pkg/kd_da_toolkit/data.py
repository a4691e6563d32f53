"""Datasets: a seeded synthetic image generator and a CIFAR-binary reader/writer."""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

PathLike = Union[str, "os.PathLike[str]"]

CIFAR_SIDE = 32
CIFAR_PIXELS = 3 * CIFAR_SIDE * CIFAR_SIDE
RECORD_SIZES = {"cifar10": 1 + CIFAR_PIXELS, "cifar100": 2 + CIFAR_PIXELS}
SYNTHETIC_NOISE = 0.08
TRAIN_SHARE = 0.8


class MalformedFileError(ValueError):
    """A CIFAR-binary file whose length is not a whole number of records."""

    def __init__(self, path: PathLike, offset: int, record_size: int) -> None:
        self.path = os.fspath(path)
        self.offset = offset
        self.record_size = record_size
        super().__init__(
            f"{self.path}: incomplete record at byte offset {offset} (record size {record_size})"
        )


@dataclass(slots=True)
class Dataset:
    """Images in [0, 1] with shape (N, channels, H, W) and integer labels."""

    images: np.ndarray
    labels: np.ndarray
    class_count: int
    split: str = "train"
    coarse_labels: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"images must have shape (N, channels, H, W), got {self.images.shape}")
        n = self.images.shape[0]
        if n == 0:
            raise ValueError("a dataset needs at least one sample")
        if self.labels.shape != (n,):
            raise ValueError(f"labels must have shape ({n},), got {self.labels.shape}")
        if self.class_count < 1:
            raise ValueError(f"class_count must be positive, got {self.class_count}")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise ValueError(f"labels must lie in [0, {self.class_count})")
        if self.images.min() < 0.0 or self.images.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got '{self.split}'")
        if self.coarse_labels is not None:
            self.coarse_labels = np.asarray(self.coarse_labels, dtype=np.int64)
            if self.coarse_labels.shape != (n,):
                raise ValueError(f"coarse_labels must have shape ({n},)")

    def __len__(self) -> int:
        return int(self.images.shape[0])

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return tuple(self.images.shape[1:])  # type: ignore[return-value]

    def subset(self, indices: np.ndarray) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.images[indices],
            self.labels[indices],
            self.class_count,
            self.split,
            None if self.coarse_labels is None else self.coarse_labels[indices],
        )


@dataclass(slots=True)
class LabeledBatch:
    images: np.ndarray
    labels: np.ndarray
    indices: np.ndarray

    def __len__(self) -> int:
        return int(self.images.shape[0])


# -- synthetic generator -------------------------------------------------------


def _render(family: int, freq: float, angle: float, side: int, rng: np.random.Generator) -> np.ndarray:
    """One jittered pattern in [0, 1] of shape (side, side)."""
    coords = (np.arange(side) + 0.5) / side
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    dx, dy = rng.uniform(-0.12, 0.12, size=2)
    scale = rng.uniform(0.85, 1.15)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    x, y = xx - 0.5 - dx, yy - 0.5 - dy
    if family == 0:
        u = x * np.cos(angle) + y * np.sin(angle)
        return 0.5 + 0.5 * np.sin(2.0 * np.pi * freq * scale * u + phase)
    if family == 1:
        r = np.hypot(x, y)
        return 0.5 + 0.5 * np.cos(2.0 * np.pi * freq * scale * r)
    cells = np.sin(np.pi * freq * scale * (x + 0.5)) * np.sin(np.pi * freq * scale * (y + 0.5))
    return np.where(cells >= 0.0, 1.0, 0.0)


def gen_synthetic(
    classes: int = 10, per_class: int = 200, side: int = 16, seed: int = 0
) -> Tuple[Dataset, Dataset]:
    """Render a class-balanced three-channel pattern dataset and split it 80/20 per class.

    Class ``c`` draws from pattern family ``c % 3`` (oriented bars, rings,
    checkerboard) at a frequency set by ``c // 3`` and gets its own color pair.
    Samples jitter in position, scale and phase and carry additive Gaussian noise.
    The output depends on ``seed`` only.
    """
    if classes < 2:
        raise ValueError(f"classes must be >= 2, got {classes}")
    if side < 8:
        raise ValueError(f"side must be >= 8, got {side}")
    if per_class < 2:
        raise ValueError(f"per_class must be >= 2, got {per_class}")

    rng = np.random.default_rng(seed)
    palette = rng.uniform(0.0, 1.0, size=(classes, 2, 3))
    n_train = min(max(int(round(TRAIN_SHARE * per_class)), 1), per_class - 1)

    train_x, train_y, test_x, test_y = [], [], [], []
    for c in range(classes):
        family, level = c % 3, c // 3
        freq = 1.5 + level
        angle = np.pi * (0.25 * level + 0.125 * family)
        fg, bg = palette[c]
        for i in range(per_class):
            pattern = _render(family, freq, angle, side, rng)
            image = pattern[None] * fg[:, None, None] + (1.0 - pattern[None]) * bg[:, None, None]
            image = np.clip(image + rng.normal(0.0, SYNTHETIC_NOISE, image.shape), 0.0, 1.0)
            if i < n_train:
                train_x.append(image)
                train_y.append(c)
            else:
                test_x.append(image)
                test_y.append(c)
    train = Dataset(np.stack(train_x), np.array(train_y), classes, "train")
    test = Dataset(np.stack(test_x), np.array(test_y), classes, "test")
    logger.debug("synthetic dataset: %d train / %d test, %dx%d", len(train), len(test), side, side)
    return train, test


# -- CIFAR binary --------------------------------------------------------------


def _record_size(variant: str) -> int:
    try:
        return RECORD_SIZES[variant]
    except KeyError:
        raise ValueError(f"variant must be one of {sorted(RECORD_SIZES)}, got '{variant}'") from None


def load_cifar_binary(path: PathLike, variant: str = "cifar100", split: str = "train") -> Dataset:
    """Read a CIFAR-10/100 binary batch file.

    cifar10 records hold one label byte, cifar100 records a coarse and a fine
    label byte (the fine label is used); both are followed by 3072 channel-planar
    pixel bytes (R, G, B planes of a row-major 32x32 image). Pixels become
    ``value / 255``.

    Raises:
        MalformedFileError: If the file length is not a multiple of the record
            size (or the file is empty); ``offset`` is the first incomplete record.
    """
    rec = _record_size(variant)
    raw = np.fromfile(os.fspath(path), dtype=np.uint8)
    if raw.size == 0 or raw.size % rec:
        raise MalformedFileError(path, (raw.size // rec) * rec, rec)
    records = raw.reshape(-1, rec)
    n_labels = rec - CIFAR_PIXELS
    labels = records[:, n_labels - 1].astype(np.int64)
    coarse = records[:, 0].astype(np.int64) if variant == "cifar100" else None
    images = records[:, n_labels:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE).astype(np.float64) / 255.0
    class_count = 10 if variant == "cifar10" else 100
    logger.info("loaded %d %s records from %s", records.shape[0], variant, os.fspath(path))
    return Dataset(images, labels, class_count, split, coarse)


def write_cifar_binary(dataset: Dataset, path: PathLike, variant: str = "cifar100") -> None:
    """Write ``dataset`` in CIFAR-binary format; the inverse of :func:`load_cifar_binary`."""
    rec = _record_size(variant)
    if dataset.images.shape[1:] != (3, CIFAR_SIDE, CIFAR_SIDE):
        raise ValueError(f"CIFAR images must have shape (3, 32, 32), got {dataset.images.shape[1:]}")
    if dataset.labels.max() > 255:
        raise ValueError("labels must fit in one byte")
    n = len(dataset)
    out = np.empty((n, rec), dtype=np.uint8)
    if variant == "cifar100":
        coarse = dataset.coarse_labels if dataset.coarse_labels is not None else np.zeros(n, dtype=np.int64)
        out[:, 0] = coarse
    out[:, rec - CIFAR_PIXELS - 1] = dataset.labels
    out[:, rec - CIFAR_PIXELS :] = np.rint(dataset.images.reshape(n, -1) * 255.0).astype(np.uint8)
    out.tofile(os.fspath(path))


# -- batching ------------------------------------------------------------------


def batches(dataset: Dataset, batch_size: int, shuffle_seed: int, epoch: int) -> Iterator[LabeledBatch]:
    """Yield the epoch's batches in an order fixed by ``(shuffle_seed, epoch)``; the last batch may be short."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = np.random.default_rng([shuffle_seed, epoch]).permutation(len(dataset))
    for start in range(0, order.size, batch_size):
        idx = order[start : start + batch_size]
        yield LabeledBatch(dataset.images[idx], dataset.labels[idx], idx)


def batch_count(dataset: Dataset, batch_size: int) -> int:
    return math.ceil(len(dataset) / batch_size)


__all__ = [
    "MalformedFileError",
    "Dataset",
    "LabeledBatch",
    "gen_synthetic",
    "load_cifar_binary",
    "write_cifar_binary",
    "batches",
    "batch_count",
]
