"""Pytest configuration and fixtures for kd-da-toolkit tests."""

import numpy as np
import pytest

from kd_da_toolkit.data import Dataset, gen_synthetic
from kd_da_toolkit.proposition import SyntheticWorld, random_world

TINY_LAYERS = ["conv:3:4", "relu", "pool", "gap", "dense:4:3"]


@pytest.fixture
def rng():
    """A fixed-seed generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def image_batch(rng):
    """Six random 3-channel 8x8 images in [0, 1] with labels in [0, 3)."""
    images = rng.uniform(0.0, 1.0, size=(6, 3, 8, 8))
    labels = np.array([0, 1, 2, 0, 1, 2])
    return images, labels


@pytest.fixture
def tiny_layers():
    """Smallest useful layer spec: one conv, pool, GAP, dense head with 3 classes."""
    return list(TINY_LAYERS)


@pytest.fixture
def tiny_dataset(rng):
    """A 3-class dataset of 24 random 8x8 images."""
    images = rng.uniform(0.0, 1.0, size=(24, 3, 8, 8))
    labels = np.tile(np.arange(3), 8)
    return Dataset(images, labels, 3, "train")


@pytest.fixture(scope="session")
def synthetic_small():
    """A small deterministic synthetic train/test pair (4 classes, 10 per class, 8x8)."""
    return gen_synthetic(classes=4, per_class=10, side=8, seed=3)


@pytest.fixture
def hand_world():
    """Support-3 world with a uniform marginal and hand-built tables."""
    return SyntheticWorld(
        marginal=np.full(3, 1.0 / 3.0),
        teacher_table=np.array([[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]]),
        predictor_table=np.array([[0.5, 0.5], [0.5, 0.5], [0.25, 0.75]]),
    )


@pytest.fixture
def support4_world():
    """Random support-4, 3-class world used by the exact-enumeration checks."""
    return random_world(4, 3, np.random.default_rng(7))


@pytest.fixture
def out_dir(tmp_path):
    """A fresh output directory."""
    path = tmp_path / "out"
    path.mkdir()
    return path
