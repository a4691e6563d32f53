"""Minimal reverse-mode differentiation over float64 NumPy arrays.

A :class:`Tensor` wraps an ``ndarray`` and, when it was produced by a
differentiable :class:`Function`, a reference to that function. Calling
:meth:`Tensor.backward` on a scalar walks the recorded graph in reverse
topological order and accumulates gradients on the leaves that require them.
"""
from __future__ import annotations

import contextlib
import logging
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]

_GRAD_ENABLED = True


class NonFiniteError(FloatingPointError):
    """A forward or backward pass produced NaN or Inf."""


class GraphError(RuntimeError):
    """Backward was requested on something that has no recorded forward pass."""


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run the enclosed ops without recording a graph."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by {where}")


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` over the axes that broadcasting expanded to reach its shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Function:
    """Base class of a differentiable op.

    Subclasses implement ``forward`` on raw arrays and ``backward`` returning
    one gradient (or ``None``) per input, in input order.
    """

    def __init__(self, *inputs: "Tensor") -> None:
        self.inputs = inputs
        self.saved: Dict[str, Any] = {}

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: "Tensor", **kwargs: Any) -> "Tensor":
        fn = cls(*inputs)
        out = fn.forward(*(t.data for t in inputs), **kwargs)
        _check_finite(out, f"{cls.__name__}.forward")
        requires_grad = _GRAD_ENABLED and any(t.requires_grad for t in inputs)
        return Tensor(out, requires_grad=requires_grad, creator=fn if requires_grad else None)


class Tensor:
    """Dense float64 array with an optional link to the op that produced it."""

    __slots__ = ("data", "grad", "requires_grad", "creator")

    def __init__(
        self,
        data: ArrayLike,
        *,
        requires_grad: bool = False,
        creator: Optional[Function] = None,
    ) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.creator = creator

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Arithmetic -----------------------------------------------------------

    def __add__(self, other: Union["Tensor", float]) -> "Tensor":
        return Add.apply(self, _as_tensor(other))

    __radd__ = __add__

    def __mul__(self, other: Union["Tensor", float]) -> "Tensor":
        return Mul.apply(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return Mul.apply(self, Tensor(-1.0))

    def __sub__(self, other: Union["Tensor", float]) -> "Tensor":
        return Add.apply(self, -_as_tensor(other))

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return MatMul.apply(self, other)

    def sum(self) -> "Tensor":
        return Sum.apply(self)

    def reshape(self, *shape: int) -> "Tensor":
        return Reshape.apply(self, shape=shape)

    # Backward -------------------------------------------------------------

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        if self.creator is None:
            raise GraphError("backward() called on a tensor with no recorded forward pass")
        if grad is None:
            if self.data.size != 1:
                raise GraphError("backward() on a non-scalar tensor needs an explicit upstream gradient")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.shape:
            raise ValueError(f"upstream gradient shape {grad.shape} does not match tensor shape {self.shape}")

        pending: Dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(_topological_order(self)):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.creator is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            input_grads = node.creator.backward(g)
            for inp, ig in zip(node.creator.inputs, input_grads):
                if ig is None or not inp.requires_grad:
                    continue
                _check_finite(ig, f"{type(node.creator).__name__}.backward")
                key = id(inp)
                pending[key] = pending[key] + ig if key in pending else ig


def _as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        if node.creator is not None:
            for inp in node.creator.inputs:
                if inp.requires_grad and id(inp) not in visited:
                    stack.append((inp, False))
    return order


# Ops ----------------------------------------------------------------------


class Add(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.saved["shapes"] = (a.shape, b.shape)
        return a + b

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        sa, sb = self.saved["shapes"]
        return unbroadcast(grad, sa), unbroadcast(grad, sb)


class Mul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.saved["a"], self.saved["b"] = a, b
        return a * b

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        a, b = self.saved["a"], self.saved["b"]
        return unbroadcast(grad * b, a.shape), unbroadcast(grad * a, b.shape)


class MatMul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ValueError(f"matmul needs (n, k) @ (k, m) operands, got {a.shape} @ {b.shape}")
        self.saved["a"], self.saved["b"] = a, b
        return a @ b

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        a, b = self.saved["a"], self.saved["b"]
        return grad @ b.T, a.T @ grad


class Sum(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        self.saved["shape"] = a.shape
        return np.asarray(a.sum())

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (np.broadcast_to(grad, self.saved["shape"]).copy(),)


class Reshape(Function):
    def forward(self, a: np.ndarray, shape: Tuple[int, ...] = ()) -> np.ndarray:
        self.saved["shape"] = a.shape
        return a.reshape(shape)

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (grad.reshape(self.saved["shape"]),)


class ReLU(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        mask = a > 0
        self.saved["mask"] = mask
        return np.where(mask, a, 0.0)

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (grad * self.saved["mask"],)


class LogSoftmax(Function):
    """Row-wise ``log softmax(a / tau)`` over the last axis."""

    def forward(self, a: np.ndarray, tau: float = 1.0) -> np.ndarray:
        z = a / tau
        shifted = z - z.max(axis=-1, keepdims=True)
        out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        self.saved["out"], self.saved["tau"] = out, tau
        return out

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        out, tau = self.saved["out"], self.saved["tau"]
        soft = np.exp(out)
        return ((grad - soft * grad.sum(axis=-1, keepdims=True)) / tau,)


class Conv3x3(Function):
    """3x3 convolution, stride 1, zero padding 1, via im2col."""

    def forward(self, x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
        if x.ndim != 4 or w.ndim != 4 or w.shape[2:] != (3, 3) or x.shape[1] != w.shape[1]:
            raise ValueError(f"conv3x3 needs x (N, C, H, W) and w (F, C, 3, 3), got {x.shape} and {w.shape}")
        n, c, h, wd = x.shape
        f = w.shape[0]
        padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(2, 3))
        cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(n * h * wd, c * 9)
        wmat = w.reshape(f, c * 9)
        out = cols @ wmat.T + b
        self.saved.update(cols=cols, wmat=wmat, x_shape=x.shape, w_shape=w.shape)
        return out.reshape(n, h, wd, f).transpose(0, 3, 1, 2)

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        cols, wmat = self.saved["cols"], self.saved["wmat"]
        n, c, h, wd = self.saved["x_shape"]
        f = wmat.shape[0]
        gmat = grad.transpose(0, 2, 3, 1).reshape(-1, f)
        dw = (gmat.T @ cols).reshape(self.saved["w_shape"])
        db = gmat.sum(axis=0)
        dcols = (gmat @ wmat).reshape(n, h, wd, c, 3, 3)
        dpadded = np.zeros((n, c, h + 2, wd + 2))
        for i in range(3):
            for j in range(3):
                dpadded[:, :, i : i + h, j : j + wd] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dpadded[:, :, 1:-1, 1:-1], dw, db


class MaxPool2(Function):
    """Non-overlapping 2x2 max pooling; ties route the gradient to the first maximum."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"maxpool2 needs even spatial extents, got {h}x{w}")
        blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
        idx = blocks.argmax(axis=-1)[..., None]
        self.saved.update(idx=idx, shape=x.shape)
        return np.take_along_axis(blocks, idx, axis=-1)[..., 0]

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        n, c, h, w = self.saved["shape"]
        blocks = np.zeros((n, c, h // 2, w // 2, 4))
        np.put_along_axis(blocks, self.saved["idx"], grad[..., None], axis=-1)
        dx = blocks.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (dx,)


class GlobalAvgPool(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.saved["shape"] = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        n, c, h, w = self.saved["shape"]
        return (np.broadcast_to(grad[:, :, None, None] / (h * w), (n, c, h, w)).copy(),)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def log_softmax(x: Tensor, tau: float = 1.0) -> Tensor:
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    return LogSoftmax.apply(x, tau=tau)


def conv3x3(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return Conv3x3.apply(x, weight, bias)


def maxpool2(x: Tensor) -> Tensor:
    return MaxPool2.apply(x)


def global_avg_pool(x: Tensor) -> Tensor:
    return GlobalAvgPool.apply(x)


__all__ = [
    "Tensor",
    "Function",
    "NonFiniteError",
    "GraphError",
    "no_grad",
    "grad_enabled",
    "unbroadcast",
    "relu",
    "log_softmax",
    "conv3x3",
    "maxpool2",
    "global_avg_pool",
]
