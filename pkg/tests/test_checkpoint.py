"""Tests for the binary checkpoint format."""

from __future__ import annotations

import struct

import numpy as np
import pytest

from kd_da_toolkit.checkpoint import (
    MAGIC,
    CheckpointError,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from kd_da_toolkit.nn import build_model


@pytest.fixture
def model(tiny_layers):
    return build_model(tiny_layers, np.random.default_rng(4))


def test_round_trip_is_bit_exact(model, tmp_path, image_batch) -> None:
    path = tmp_path / "m.dgkd"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path, expect_spec=model.layer_spec)
    assert loaded.layer_spec == model.layer_spec
    for a, b in zip(model.state(), loaded.state()):
        np.testing.assert_array_equal(a, b)
    images, _ = image_batch
    np.testing.assert_array_equal(loaded.logits(images), model.logits(images))


def test_header_layout(model) -> None:
    blob = encode_checkpoint(model)
    assert blob[:4] == MAGIC
    version, spec_len = struct.unpack_from("<HI", blob, 4)
    assert version == 1
    assert blob[10 : 10 + spec_len].decode("utf-8").startswith('["conv:3:4"')
    (count,) = struct.unpack_from("<I", blob, 10 + spec_len)
    assert count == 4
    extents = (1 + 4 * 4) + (1 + 4) + (1 + 2 * 4) + (1 + 4)
    assert len(blob) == 10 + spec_len + 4 + extents + 8 * model.num_parameters()
    assert blob[-8 * model.num_parameters() :] == b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes() for a in model.state()
    )


def test_bad_magic(model) -> None:
    blob = b"XXXX" + encode_checkpoint(model)[4:]
    with pytest.raises(CheckpointError, match="magic"):
        decode_checkpoint(blob)


def test_bad_version(model) -> None:
    blob = bytearray(encode_checkpoint(model))
    struct.pack_into("<H", blob, 4, 99)
    with pytest.raises(CheckpointError, match="version"):
        decode_checkpoint(bytes(blob))


@pytest.mark.parametrize("cut", [3, 12, 40, 1])
def test_truncation(model, cut: int) -> None:
    blob = encode_checkpoint(model)
    with pytest.raises(CheckpointError):
        decode_checkpoint(blob[: len(blob) - cut])


def test_trailing_bytes(model) -> None:
    with pytest.raises(CheckpointError, match="trailing"):
        decode_checkpoint(encode_checkpoint(model) + b"\0")


def test_spec_mismatch(model, tmp_path) -> None:
    path = tmp_path / "m.dgkd"
    save_checkpoint(model, path)
    with pytest.raises(CheckpointError, match="mismatch"):
        load_checkpoint(path, expect_spec=["conv:3:8", "gap", "dense:8:3"])


def test_checkpoint_error_is_value_error() -> None:
    assert issubclass(CheckpointError, ValueError)
