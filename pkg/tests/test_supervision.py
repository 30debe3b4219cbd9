# tests/test_supervision.py
import math

import numpy as np
import pytest

from src import tensor_core as tc
from src.config import LOSS_HEADS, AblationConfig
from src.supervision import (
    AwlParams,
    LossBreakdown,
    _component,
    awl_sigmas,
    awl_total,
    binary_target,
    boundary_target,
    cross_entropy,
    fixed_weight_total,
    init_awl,
    make_targets,
    total_loss,
)
from src.tensor_core import ContractError, NonFiniteError, Tensor


def scalars(values):
    return [Tensor(np.array(v, dtype=np.float64)) for v in values]


def awl_at(s):
    return AwlParams(Tensor(np.asarray(s, dtype=np.float64), requires_grad=True))


def golden_min(f, lo, hi, tol=1e-10):
    ratio = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - ratio * (b - a), a + ratio * (b - a)
    while b - a > tol:
        if f(c) < f(d):
            b, d = d, c
            c = b - ratio * (b - a)
        else:
            a, c = c, d
            d = a + ratio * (b - a)
    return (a + b) / 2


class TestTargets:
    def test_binary(self):
        np.testing.assert_array_equal(binary_target(np.array([[0, 2], [1, 0]])), [[0, 1], [1, 0]])

    def test_boundary_band(self):
        labels = np.zeros((12, 12), dtype=np.int64)
        labels[:, 6:] = 1
        edge = boundary_target(labels)
        assert edge[:, 4:8].all()
        assert not edge[:, :3].any() and not edge[:, 9:].any()

    def test_uniform_map_has_no_boundary(self):
        assert not boundary_target(np.full((6, 6), 2)).any()

    def test_make_targets_adds_batch_axis(self):
        targets = make_targets(np.array([[0, 1], [2, 0]]), 3)
        assert targets.semantic.shape == (1, 2, 2)
        assert targets.binary.shape == targets.boundary.shape == (1, 2, 2)

    def test_out_of_range(self):
        with pytest.raises(ContractError):
            make_targets(np.array([[0, 3]]), 3)
        with pytest.raises(ContractError):
            make_targets(np.array([[-1, 0]]), 3)


class TestCrossEntropy:
    def test_uniform_nine_classes(self):
        z = Tensor(np.zeros((1, 9, 4, 4)))
        loss = cross_entropy(z, np.random.default_rng(0).integers(0, 9, (1, 4, 4)))
        assert loss.item() == pytest.approx(math.log(9), abs=1e-6)

    def test_uniform_two_classes(self):
        loss = cross_entropy(Tensor(np.zeros((2, 2, 3, 3))), np.ones((2, 3, 3), dtype=np.int64))
        assert loss.item() == pytest.approx(math.log(2), abs=1e-6)

    def test_gradient_closed_form(self, rng):
        z = Tensor(rng.normal(size=(1, 3, 2, 2)), requires_grad=True)
        target = np.array([[[0, 1], [2, 1]]])
        grads = tc.backward(cross_entropy(z, target), {"z": z})
        soft = np.exp(z.data) / np.exp(z.data).sum(axis=1, keepdims=True)
        onehot = np.eye(3)[target].transpose(0, 3, 1, 2)
        np.testing.assert_allclose(grads["z"].data, (soft - onehot) / 4, atol=1e-12)

    def test_shape_checks(self):
        with pytest.raises(ContractError):
            cross_entropy(Tensor(np.zeros((1, 3, 2, 2))), np.zeros((1, 3, 3), dtype=np.int64))
        with pytest.raises(ContractError):
            cross_entropy(Tensor(np.zeros((1, 3, 2, 2))), np.full((1, 2, 2), 3))
        with pytest.raises(ContractError):
            cross_entropy(Tensor(np.zeros((1, 1, 2, 2))), np.zeros((1, 2, 2), dtype=np.int64))


class TestAutomaticWeighting:
    def test_single_task_value(self):
        mask = ("se",)
        total = awl_total(scalars([0, 0, 0, 0, 0, 0, 4.0]), awl_at([0.0] * 6 + [math.log(2)]), mask)
        assert total.item() == pytest.approx(1.0 + math.log(2) / 2, abs=1e-9)
        assert total.item() == pytest.approx(1.3466, abs=1e-4)

    def test_all_zero_weights(self):
        total = awl_total(scalars([1, 2, 3, 4, 5, 6, 7]), init_awl())
        assert total.item() == pytest.approx(28 / 2, rel=1e-6)

    def test_optimum_at_log_loss(self):
        losses = scalars([0, 0, 0, 0, 0, 0, 4.0])

        def f(s):
            return awl_total(losses, awl_at([0.0] * 6 + [s]), ("se",)).item()

        assert golden_min(f, -5.0, 5.0) == pytest.approx(math.log(4.0), abs=1e-6)

    def test_gradient_vanishes_at_optimum(self):
        losses = scalars([1.0, 2.0, 0.5, 1.5, 3.0, 0.2, 4.0])
        awl = awl_at(np.log([1.0, 2.0, 0.5, 1.5, 3.0, 0.2, 4.0]))
        grads = tc.backward(awl_total(losses, awl), {"s": awl.s})
        np.testing.assert_allclose(grads["s"].data, 0.0, atol=1e-12)

    def test_masked_heads_drop_out(self):
        losses = scalars([1, 1, 1, 1, 1, 1, 1])
        full = awl_total(losses, init_awl()).item()
        masked = awl_total(losses, init_awl(), tuple(h for h in LOSS_HEADS if h != "bou2")).item()
        assert full - masked == pytest.approx(0.5, abs=1e-6)

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            awl_total(scalars([1, 2]), init_awl())

    def test_sigmas(self):
        np.testing.assert_allclose(awl_sigmas(awl_at([0.0, 2 * math.log(3.0)])), [1.0, 3.0])


class TestFixedWeights:
    def test_value(self):
        total = fixed_weight_total(scalars([1, 1, 1, 1, 1, 1, 2]), (1, 1, 1, 1, 1, 1, 3))
        assert total.item() == pytest.approx((6 + 6) / 2)

    def test_count(self):
        with pytest.raises(ContractError):
            fixed_weight_total(scalars([1, 1]), (1.0,))

    def test_total_loss_switch(self):
        losses = LossBreakdown(bin=scalars([1, 1, 1]), bou=scalars([1, 1, 1]), se=scalars([2])[0])
        learned = total_loss(losses, init_awl()).item()
        fixed = total_loss(losses, init_awl(), AblationConfig(fixed_loss_weights=(0, 0, 0, 0, 0, 0, 1))).item()
        assert learned == pytest.approx(4.0)
        assert fixed == pytest.approx(1.0)
        assert losses.total.item() == pytest.approx(1.0)
        assert set(losses.as_dict()) == {*LOSS_HEADS, "total"}


class TestNonFinite:
    def test_component_is_named(self):
        def broken():
            raise NonFiniteError("non-finite values produced by 'exp'")

        with pytest.raises(NonFiniteError, match="bou2") as info:
            _component("bou2", broken)
        assert info.value.component == "bou2"
