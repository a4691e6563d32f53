"""Finite-difference gradient checks and graph behaviour of the tensor engine."""

from __future__ import annotations

from typing import Callable

import numpy as np
import pytest

from kd_da_toolkit.tensor import (
    GraphError,
    NonFiniteError,
    Tensor,
    conv3x3,
    global_avg_pool,
    log_softmax,
    maxpool2,
    no_grad,
    relu,
)

GRAD_TOL = 1e-4


def _numeric_grad(f: Callable[[], float], x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + eps
        up = f()
        x[idx] = old - eps
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2.0 * eps)
    return g


def _relative_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def _check_op(build: Callable[..., Tensor], *arrays: np.ndarray, seed: int = 0) -> None:
    """Compare the analytic gradient of ``sum(build(*inputs) * R)`` with central differences."""
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(*leaves)
    weights = np.random.default_rng(seed).normal(size=out.shape)
    (out * Tensor(weights)).sum().backward()

    def value() -> float:
        return float(np.sum(build(*[Tensor(a) for a in arrays]).data * weights))

    for leaf, array in zip(leaves, arrays):
        numeric = _numeric_grad(value, array)
        assert leaf.grad is not None
        assert _relative_error(leaf.grad, numeric) < GRAD_TOL


def test_add_with_broadcasting_gradient(rng) -> None:
    _check_op(lambda a, b: a + b, rng.normal(size=(4, 3)), rng.normal(size=(3,)))


def test_mul_gradient(rng) -> None:
    _check_op(lambda a, b: a * b, rng.normal(size=(2, 5)), rng.normal(size=(2, 5)))


def test_matmul_gradient(rng) -> None:
    _check_op(lambda a, b: a @ b, rng.normal(size=(4, 3)), rng.normal(size=(3, 2)))


def test_sum_and_reshape_gradient(rng) -> None:
    _check_op(lambda a: a.reshape(6, 2) * a.reshape(6, 2), rng.normal(size=(3, 4)))
    _check_op(lambda a: a.sum() * a.sum(), rng.normal(size=(2, 3)))


def test_relu_gradient(rng) -> None:
    x = rng.normal(size=(5, 4))
    x[np.abs(x) < 0.05] = 0.5  # keep every entry away from the kink
    _check_op(relu, x)


@pytest.mark.parametrize("tau", [1.0, 4.0])
def test_log_softmax_gradient(rng, tau: float) -> None:
    _check_op(lambda a: log_softmax(a, tau), rng.normal(size=(3, 5)) * 3.0)


def test_conv3x3_gradient(rng) -> None:
    _check_op(
        conv3x3,
        rng.normal(size=(2, 2, 5, 4)),
        rng.normal(size=(3, 2, 3, 3)),
        rng.normal(size=(3,)),
    )


def test_maxpool2_gradient(rng) -> None:
    _check_op(maxpool2, rng.normal(size=(2, 3, 4, 6)))


def test_global_avg_pool_gradient(rng) -> None:
    _check_op(global_avg_pool, rng.normal(size=(2, 3, 4, 4)))


def test_conv3x3_matches_direct_convolution(rng) -> None:
    x = rng.normal(size=(1, 2, 4, 4))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=(3,))
    out = conv3x3(Tensor(x), Tensor(w), Tensor(b)).data
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    expected = np.zeros((1, 3, 4, 4))
    for f in range(3):
        for i in range(4):
            for j in range(4):
                expected[0, f, i, j] = np.sum(padded[0, :, i : i + 3, j : j + 3] * w[f]) + b[f]
    np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-12)


def test_maxpool2_rejects_odd_extents(rng) -> None:
    with pytest.raises(ValueError):
        maxpool2(Tensor(rng.normal(size=(1, 1, 3, 4))))


def test_reused_tensor_accumulates_gradient() -> None:
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_allclose(x.grad, [3.0, -4.0])


def test_no_grad_records_no_graph() -> None:
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (x * 2.0).sum()
    assert y.creator is None
    with pytest.raises(GraphError):
        y.backward()


def test_backward_on_leaf_raises() -> None:
    with pytest.raises(GraphError):
        Tensor(np.ones(2), requires_grad=True).backward()


def test_non_finite_forward_raises() -> None:
    with pytest.raises(NonFiniteError):
        Tensor(np.array([np.inf])) * Tensor(np.array([0.0]))


def test_log_softmax_rejects_bad_tau() -> None:
    with pytest.raises(ValueError):
        log_softmax(Tensor(np.zeros((1, 2))), 0.0)
