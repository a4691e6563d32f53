"""Versioned binary checkpoints of a :class:`~kd_da_toolkit.nn.Model`.

Layout (all integers little-endian)::

    b"DGKD" | uint16 version | uint32 spec length | UTF-8 JSON layer spec
    | uint32 tensor count | per tensor: uint8 ndim, ndim x uint32 extents
    | concatenated little-endian float64 payload
"""
from __future__ import annotations

import json
import logging
import os
import struct
from typing import List, Optional, Tuple, Union

import numpy as np

from .nn import Model, build_model

logger = logging.getLogger(__name__)

MAGIC = b"DGKD"
VERSION = 1

PathLike = Union[str, "os.PathLike[str]"]


class CheckpointError(ValueError):
    """Unreadable or inconsistent checkpoint."""


def encode_checkpoint(model: Model) -> bytes:
    """Serialize ``model`` to the DGKD layout described above.

    Args:
        model: Model whose layer spec and parameter arrays are stored.

    Returns:
        The complete checkpoint blob.
    """
    spec = json.dumps(model.layer_spec).encode("utf-8")
    arrays = model.state()
    parts = [MAGIC, struct.pack("<HI", VERSION, len(spec)), spec, struct.pack("<I", len(arrays))]
    for arr in arrays:
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    parts.extend(np.ascontiguousarray(arr, dtype="<f8").tobytes() for arr in arrays)
    return b"".join(parts)


class _Reader:
    def __init__(self, blob: bytes) -> None:
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"truncated checkpoint while reading {what} at byte {self.pos}")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str) -> Tuple[int, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(blob: bytes) -> Tuple[List[str], List[np.ndarray]]:
    """Parse a checkpoint blob into (layer spec, parameter arrays)."""
    reader = _Reader(blob)
    if reader.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic")
    version, spec_len = reader.unpack("<HI", "header")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        spec = json.loads(reader.take(spec_len, "layer spec").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt layer spec: {exc}") from exc
    if not isinstance(spec, list) or not all(isinstance(s, str) for s in spec):
        raise CheckpointError("layer spec must be a list of strings")
    (count,) = reader.unpack("<I", "tensor count")
    shapes = []
    for i in range(count):
        (ndim,) = reader.unpack("<B", f"rank of tensor {i}")
        shapes.append(reader.unpack(f"<{ndim}I", f"extents of tensor {i}"))
    arrays = []
    for i, shape in enumerate(shapes):
        n = int(np.prod(shape, dtype=np.int64))
        raw = reader.take(8 * n, f"payload of tensor {i}")
        arrays.append(np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape))
    if reader.pos != len(blob):
        raise CheckpointError(f"{len(blob) - reader.pos} trailing bytes after the payload")
    return spec, arrays


def save_checkpoint(model: Model, path: PathLike) -> None:
    """Write :func:`encode_checkpoint` output to ``path``, replacing any existing file."""
    blob = encode_checkpoint(model)
    with open(os.fspath(path), "wb") as fh:
        fh.write(blob)
    logger.info("wrote checkpoint %s (%d parameters)", os.fspath(path), model.num_parameters())


def load_checkpoint(path: PathLike, rng: Optional[np.random.Generator] = None, *, expect_spec: Optional[List[str]] = None) -> Model:
    """Rebuild the model stored at ``path``.

    Raises:
        CheckpointError: On a malformed file or when ``expect_spec`` is given and differs.
    """
    with open(os.fspath(path), "rb") as fh:
        spec, arrays = decode_checkpoint(fh.read())
    if expect_spec is not None and list(expect_spec) != spec:
        raise CheckpointError(f"layer spec mismatch: checkpoint has {spec}, expected {list(expect_spec)}")
    try:
        model = build_model(spec, rng)
        model.load_state(arrays)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc
    return model


__all__ = [
    "MAGIC",
    "VERSION",
    "CheckpointError",
    "encode_checkpoint",
    "decode_checkpoint",
    "save_checkpoint",
    "load_checkpoint",
]
