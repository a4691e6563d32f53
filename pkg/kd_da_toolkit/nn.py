"""Layers, models, SGD with momentum and the multi-step learning-rate schedule."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .losses import softmax_temp
from .tensor import GraphError, Tensor, conv3x3, global_avg_pool, maxpool2, no_grad, relu

logger = logging.getLogger(__name__)

LayerSpec = Sequence[str]


class Layer:
    """A callable stage of a :class:`Model` with zero or more parameters."""

    spec: str = ""

    def __call__(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def parameters(self) -> List[Tensor]:
        return []


class Conv(Layer):
    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator) -> None:
        fan_in = in_channels * 9
        self.weight = Tensor(rng.normal(0.0, math.sqrt(2.0 / fan_in), (out_channels, in_channels, 3, 3)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True)
        self.spec = f"conv:{in_channels}:{out_channels}"

    def __call__(self, x: Tensor) -> Tensor:
        return conv3x3(x, self.weight, self.bias)

    def parameters(self) -> List[Tensor]:
        return [self.weight, self.bias]


class Dense(Layer):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator) -> None:
        self.weight = Tensor(rng.normal(0.0, math.sqrt(2.0 / in_features), (in_features, out_features)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True)
        self.spec = f"dense:{in_features}:{out_features}"

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2:
            x = x.reshape(x.shape[0], -1)
        return x @ self.weight + self.bias

    def parameters(self) -> List[Tensor]:
        return [self.weight, self.bias]


class ReLULayer(Layer):
    spec = "relu"

    def __call__(self, x: Tensor) -> Tensor:
        return relu(x)


class MaxPoolLayer(Layer):
    spec = "pool"

    def __call__(self, x: Tensor) -> Tensor:
        return maxpool2(x)


class GlobalAvgPoolLayer(Layer):
    spec = "gap"

    def __call__(self, x: Tensor) -> Tensor:
        return global_avg_pool(x)


def parse_layer_spec(spec: LayerSpec) -> List[Tuple[str, Tuple[int, ...]]]:
    """Parse ``["conv:3:8", "relu", "pool", "gap", "dense:8:10"]`` into (kind, args) pairs."""
    if not spec:
        raise ValueError("layer spec must contain at least one layer")
    parsed = []
    for token in spec:
        kind, *args = str(token).split(":")
        if kind in ("conv", "dense"):
            if len(args) != 2:
                raise ValueError(f"layer '{token}' must be '{kind}:<in>:<out>'")
            dims = tuple(int(a) for a in args)
            if min(dims) <= 0:
                raise ValueError(f"layer '{token}' must have positive extents")
            parsed.append((kind, dims))
        elif kind in ("relu", "pool", "gap"):
            if args:
                raise ValueError(f"layer '{token}' takes no arguments")
            parsed.append((kind, ()))
        else:
            raise ValueError(f"unknown layer kind '{kind}' in '{token}'")
    if parsed[-1][0] != "dense":
        raise ValueError("the last layer must be dense (it produces the logits)")
    return parsed


class Model:
    """An ordered stack of layers with paired momentum buffers."""

    def __init__(self, layers: Sequence[Layer]) -> None:
        self.layers = list(layers)
        self.buffers: List[np.ndarray] = [np.zeros_like(p.data) for p in self.parameters()]
        self._forward_recorded = False

    @property
    def layer_spec(self) -> List[str]:
        return [layer.spec for layer in self.layers]

    @property
    def num_classes(self) -> int:
        last = self.layers[-1]
        assert isinstance(last, Dense)
        return last.weight.shape[1]

    @property
    def in_channels(self) -> Optional[int]:
        first = self.layers[0]
        return first.weight.shape[1] if isinstance(first, Conv) else None

    def parameters(self) -> List[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, x: Union[Tensor, np.ndarray]) -> Tensor:
        out = x if isinstance(x, Tensor) else Tensor(x)
        for layer in self.layers:
            out = layer(out)
        self._forward_recorded = out.creator is not None
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def logits(self, images: np.ndarray, chunk: int = 512) -> np.ndarray:
        """Forward without graph recording, in fixed-size chunks."""
        images = np.asarray(images, dtype=np.float64)
        outs = []
        with no_grad():
            for start in range(0, images.shape[0], chunk):
                out = Tensor(images[start : start + chunk])
                for layer in self.layers:
                    out = layer(out)
                outs.append(out.data)
        if not outs:
            return np.zeros((0, self.num_classes))
        return np.concatenate(outs, axis=0)

    def predict_proba(self, images: np.ndarray, tau: float = 1.0) -> np.ndarray:
        return softmax_temp(self.logits(images), tau)

    def state(self) -> List[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]

    def load_state(self, arrays: Sequence[np.ndarray]) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise ValueError(f"expected {len(params)} parameter arrays, got {len(arrays)}")
        for p, arr in zip(params, arrays):
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"parameter shape mismatch: {arr.shape} vs {p.shape}")
            p.data = arr.copy()
        self.buffers = [np.zeros_like(p.data) for p in params]


def build_model(spec: LayerSpec, rng: Optional[np.random.Generator] = None) -> Model:
    """Build a :class:`Model` from a layer spec with He-normal initialisation."""
    rng = rng if rng is not None else np.random.default_rng(0)
    layers: List[Layer] = []
    for kind, dims in parse_layer_spec(spec):
        if kind == "conv":
            layers.append(Conv(dims[0], dims[1], rng))
        elif kind == "dense":
            layers.append(Dense(dims[0], dims[1], rng))
        elif kind == "relu":
            layers.append(ReLULayer())
        elif kind == "pool":
            layers.append(MaxPoolLayer())
        else:
            layers.append(GlobalAvgPoolLayer())
    return Model(layers)


def backward(model: Model, loss: Tensor) -> List[np.ndarray]:
    """Backpropagate ``loss`` and return one gradient array per model parameter."""
    if not model._forward_recorded or loss.creator is None:
        raise GraphError("backward() without a recorded forward pass")
    model.zero_grad()
    loss.backward()
    model._forward_recorded = False
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in model.parameters()]


def sgd_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    lr: float,
    momentum: float = 0.9,
    weight_decay: float = 5e-4,
    *,
    buffers: Optional[List[np.ndarray]] = None,
) -> Sequence[np.ndarray]:
    """One in-place SGD step: ``v = momentum * v + g + wd * p``; ``p -= lr * v``.

    Args:
        params: Parameter arrays, updated in place.
        grads: Gradients, same shapes as ``params``.
        lr: Learning rate.
        momentum: Momentum coefficient.
        weight_decay: L2 coefficient folded into the gradient.
        buffers: Momentum buffers, updated in place. Fresh zero buffers are used when omitted.

    Returns:
        The updated ``params``.

    Raises:
        ValueError: On non-positive ``lr`` or any shape mismatch.
    """
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    if len(params) != len(grads):
        raise ValueError(f"got {len(params)} parameters but {len(grads)} gradients")
    if buffers is None:
        buffers = [np.zeros_like(p) for p in params]
    if len(buffers) != len(params):
        raise ValueError(f"got {len(params)} parameters but {len(buffers)} momentum buffers")
    for p, g, v in zip(params, grads, buffers):
        if p.shape != g.shape or p.shape != v.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, buffer {v.shape}")
    for p, g, v in zip(params, grads, buffers):
        v *= momentum
        v += g
        if weight_decay:
            v += weight_decay * p
        p -= lr * v
    return params


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True, slots=True)
class ScheduleConfig:
    """Multi-step schedule; ``epoch_scale_k`` stretches total and decay epochs alike."""

    base_lr: float = 0.05
    total_epochs: int = 240
    decay_epochs: Tuple[int, ...] = (150, 180, 210)
    decay_factor: float = 0.1
    epoch_scale_k: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "decay_epochs", tuple(int(e) for e in self.decay_epochs))
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if self.total_epochs <= 0:
            raise ValueError(f"total_epochs must be positive, got {self.total_epochs}")
        if self.decay_factor <= 0:
            raise ValueError(f"decay_factor must be positive, got {self.decay_factor}")
        if self.epoch_scale_k <= 0:
            raise ValueError(f"epoch_scale_k must be positive, got {self.epoch_scale_k}")
        d = self.decay_epochs
        if any(b <= a for a, b in zip(d, d[1:])):
            raise ValueError(f"decay_epochs must be strictly increasing, got {list(d)}")
        if d and d[-1] >= self.total_epochs:
            raise ValueError(f"decay_epochs must be < total_epochs ({self.total_epochs}), got {list(d)}")

    def scaled(self) -> Tuple[int, Tuple[int, ...]]:
        """Return (scaled total epochs, scaled decay epochs)."""
        k = self.epoch_scale_k
        return _round_half_up(k * self.total_epochs), tuple(_round_half_up(k * e) for e in self.decay_epochs)

    @property
    def epochs(self) -> int:
        return self.scaled()[0]


def lr_at(epoch: int, sched: ScheduleConfig) -> float:
    """Learning rate in effect during ``epoch`` (0-based)."""
    total, decays = sched.scaled()
    if epoch < 0 or epoch >= total:
        raise ValueError(f"epoch {epoch} out of range [0, {total})")
    passed = sum(1 for d in decays if d <= epoch)
    return sched.base_lr * sched.decay_factor**passed


__all__ = [
    "Layer",
    "Conv",
    "Dense",
    "Model",
    "ScheduleConfig",
    "build_model",
    "parse_layer_spec",
    "backward",
    "sgd_step",
    "lr_at",
]
