"""Tests for layers, model assembly, SGD and the learning-rate schedule."""

from __future__ import annotations

import numpy as np
import pytest

from kd_da_toolkit.losses import cross_entropy_objective, log_softmax_temp
from kd_da_toolkit.nn import Dense, ScheduleConfig, backward, build_model, lr_at, parse_layer_spec, sgd_step
from kd_da_toolkit.tensor import GraphError, Tensor


def _mean_ce(model, images: np.ndarray, labels: np.ndarray) -> float:
    logp = log_softmax_temp(model.logits(images))
    return float(-logp[np.arange(len(labels)), labels].mean())


def test_parse_layer_spec_accepts_known_layers(tiny_layers) -> None:
    parsed = parse_layer_spec(tiny_layers)
    assert [kind for kind, _ in parsed] == ["conv", "relu", "pool", "gap", "dense"]
    assert parsed[0][1] == (3, 4)


@pytest.mark.parametrize(
    "spec",
    [
        [],
        ["conv:3:4", "relu"],
        ["conv:3", "dense:4:2"],
        ["conv:3:0", "gap", "dense:4:2"],
        ["relu:1", "dense:4:2"],
        ["softmax", "dense:4:2"],
    ],
)
def test_parse_layer_spec_rejects_bad_specs(spec) -> None:
    with pytest.raises(ValueError):
        parse_layer_spec(spec)


def test_build_model_shapes_and_spec(tiny_layers, image_batch) -> None:
    images, _ = image_batch
    model = build_model(tiny_layers, np.random.default_rng(0))
    assert model.layer_spec == tiny_layers
    assert model.num_classes == 3
    assert model.in_channels == 3
    assert model.num_parameters() == 4 * 3 * 9 + 4 + 4 * 3 + 3
    assert model.logits(images).shape == (6, 3)
    probs = model.predict_proba(images, tau=4.0)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0)


def test_build_model_is_deterministic_per_rng(tiny_layers) -> None:
    a = build_model(tiny_layers, np.random.default_rng(5))
    b = build_model(tiny_layers, np.random.default_rng(5))
    for x, y in zip(a.state(), b.state()):
        np.testing.assert_array_equal(x, y)


def test_logits_chunking_matches_single_pass(tiny_layers, image_batch) -> None:
    images, _ = image_batch
    model = build_model(tiny_layers)
    np.testing.assert_allclose(model.logits(images, chunk=4), model.logits(images), rtol=0, atol=1e-14)


def test_model_gradient_matches_finite_differences(tiny_layers, image_batch) -> None:
    """Backprop through conv, ReLU, pool, GAP and dense agrees with central differences."""
    images, labels = image_batch
    model = build_model(tiny_layers, np.random.default_rng(2))
    grads = backward(model, cross_entropy_objective(model(images), labels))

    eps = 1e-6
    for param, grad in zip(model.parameters(), grads):
        numeric = np.zeros_like(param.data)
        for idx in np.ndindex(param.shape):
            old = param.data[idx]
            param.data[idx] = old + eps
            up = _mean_ce(model, images, labels)
            param.data[idx] = old - eps
            down = _mean_ce(model, images, labels)
            param.data[idx] = old
            numeric[idx] = (up - down) / (2 * eps)
        err = np.linalg.norm(grad - numeric) / max(np.linalg.norm(grad) + np.linalg.norm(numeric), 1e-12)
        assert err < 1e-4


def test_backward_without_forward_raises(tiny_layers, image_batch) -> None:
    images, labels = image_batch
    model = build_model(tiny_layers)
    loss = cross_entropy_objective(model(images), labels)
    backward(model, loss)
    with pytest.raises(GraphError):
        backward(model, loss)


def test_sgd_step_momentum_and_weight_decay() -> None:
    p = [np.array([1.0, -2.0])]
    g = [np.array([0.5, 0.5])]
    buffers = [np.array([1.0, 0.0])]
    sgd_step(p, g, lr=0.1, momentum=0.9, weight_decay=0.01, buffers=buffers)
    expected_v = np.array([0.9 + 0.5 + 0.01, 0.5 - 0.02])
    np.testing.assert_allclose(buffers[0], expected_v)
    np.testing.assert_allclose(p[0], np.array([1.0, -2.0]) - 0.1 * expected_v)


def test_sgd_step_validates_inputs() -> None:
    with pytest.raises(ValueError):
        sgd_step([np.zeros(2)], [np.zeros(2)], lr=0.0)
    with pytest.raises(ValueError):
        sgd_step([np.zeros(2)], [np.zeros(3)], lr=0.1)
    with pytest.raises(ValueError):
        sgd_step([np.zeros(2)], [], lr=0.1)


def test_schedule_default_values() -> None:
    sched = ScheduleConfig()
    assert sched.epochs == 240
    assert lr_at(0, sched) == pytest.approx(0.05)
    assert lr_at(149, sched) == pytest.approx(0.05)
    assert lr_at(150, sched) == pytest.approx(0.005)
    assert lr_at(180, sched) == pytest.approx(0.0005)
    assert lr_at(239, sched) == pytest.approx(0.00005)


def test_schedule_scaled_rounds_half_up() -> None:
    sched = ScheduleConfig(epoch_scale_k=0.05)
    assert sched.scaled() == (12, (8, 9, 11))
    assert [lr_at(e, sched) for e in (7, 8, 9, 10, 11)] == pytest.approx([0.05, 0.005, 0.0005, 0.0005, 0.00005])


def test_lr_at_out_of_range() -> None:
    sched = ScheduleConfig(epoch_scale_k=0.05)
    with pytest.raises(ValueError):
        lr_at(12, sched)
    with pytest.raises(ValueError):
        lr_at(-1, sched)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"base_lr": 0.0},
        {"total_epochs": 0},
        {"decay_epochs": (180, 150)},
        {"decay_epochs": (240,)},
        {"epoch_scale_k": -1.0},
    ],
)
def test_schedule_validation(kwargs) -> None:
    with pytest.raises(ValueError):
        ScheduleConfig(**kwargs)


def test_load_state_round_trip_and_mismatch(tiny_layers) -> None:
    src = build_model(tiny_layers, np.random.default_rng(1))
    dst = build_model(tiny_layers, np.random.default_rng(2))
    dst.buffers[0] += 1.0
    dst.load_state(src.state())
    for x, y in zip(src.state(), dst.state()):
        np.testing.assert_array_equal(x, y)
    assert all(not b.any() for b in dst.buffers)
    with pytest.raises(ValueError):
        dst.load_state(src.state()[:-1])
    with pytest.raises(ValueError):
        dst.load_state([np.zeros(1)] * len(src.state()))


def test_lr_at_doubled_schedule() -> None:
    sched = ScheduleConfig(epoch_scale_k=2.0)
    assert sched.scaled() == (480, (300, 360, 420))
    assert lr_at(299, sched) == pytest.approx(0.05)
    assert lr_at(300, sched) == pytest.approx(0.005)


@pytest.mark.parametrize("k", [0.05, 0.5, 1.0, 2.0])
def test_lr_at_is_non_increasing(k: float) -> None:
    sched = ScheduleConfig(epoch_scale_k=k)
    rates = [lr_at(e, sched) for e in range(sched.epochs)]
    assert all(b <= a for a, b in zip(rates, rates[1:]))


@pytest.mark.parametrize("k", [0.05, 0.5, 2.0])
def test_scaled_decay_boundaries_match_base_schedule(k: float) -> None:
    base = ScheduleConfig()
    sched = ScheduleConfig(epoch_scale_k=k)
    for e, d in zip(base.decay_epochs, sched.scaled()[1]):
        assert lr_at(d, sched) == pytest.approx(lr_at(e, base))
        assert lr_at(d - 1, sched) == pytest.approx(lr_at(e - 1, base))


def test_sgd_step_plain_example() -> None:
    p = [np.array([1.0])]
    sgd_step(p, [np.array([1.0])], lr=0.1, momentum=0.0, weight_decay=0.0)
    np.testing.assert_allclose(p[0], [0.9])


def test_sgd_step_momentum_accumulates_over_two_steps() -> None:
    g = np.array([0.3, -1.2])
    p = [np.zeros(2)]
    buffers = [np.zeros(2)]
    for _ in range(2):
        sgd_step(p, [g], lr=0.1, momentum=0.9, weight_decay=0.0, buffers=buffers)
    np.testing.assert_allclose(buffers[0], 1.9 * g)
    np.testing.assert_allclose(p[0], -0.1 * (g + 1.9 * g))


def test_dense_layer_with_zero_input_passes_upstream_to_bias() -> None:
    layer = Dense(4, 3, np.random.default_rng(0))
    upstream = np.array([[0.5, -1.0, 2.0]])
    (layer(Tensor(np.zeros((1, 4)))) * Tensor(upstream)).sum().backward()
    np.testing.assert_array_equal(layer.weight.grad, np.zeros((4, 3)))
    np.testing.assert_allclose(layer.bias.grad, upstream[0])
