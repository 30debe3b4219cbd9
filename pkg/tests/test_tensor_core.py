# tests/test_tensor_core.py
import numpy as np
import pytest

from src import tensor_core as tc
from src.tensor_core import (
    ContractError,
    DimensionError,
    NamedTensorSet,
    NonFiniteError,
    OracleError,
    Tensor,
    backward,
    finite_diff_check,
)


def t64(data, requires_grad=False):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=requires_grad, dtype=np.float64)


class TestTensor:
    def test_float32_default(self):
        assert Tensor([1, 2, 3]).dtype == np.float32

    def test_float64_kept(self):
        assert Tensor(np.zeros(3)).dtype == np.float64

    def test_rejects_nan_and_inf(self):
        with pytest.raises(NonFiniteError):
            Tensor([1.0, np.nan])
        with pytest.raises(NonFiniteError):
            Tensor([np.inf])

    def test_rejects_non_float(self):
        with pytest.raises(ContractError):
            Tensor(np.array(["a"]))

    def test_overflow_surfaces_as_non_finite(self):
        with np.errstate(over="ignore"):
            with pytest.raises(NonFiniteError):
                tc.exp(Tensor([1000.0]))

    def test_item_needs_one_element(self):
        assert Tensor([2.5]).item() == 2.5
        with pytest.raises(ContractError):
            Tensor([1.0, 2.0]).item()

    def test_broadcast_mismatch(self):
        with pytest.raises(DimensionError):
            Tensor(np.zeros((2, 3))) + Tensor(np.zeros((4,)))


class TestConv2d:
    def test_all_ones_3x3(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        k = Tensor(np.ones((1, 1, 3, 3)))
        out = tc.conv2d(x, k, padding=1).data[0, 0]
        assert out[1, 1] == pytest.approx(9.0)
        assert out[0, 0] == pytest.approx(4.0)
        assert out[0, 1] == pytest.approx(6.0)

    def test_delta_kernel_is_identity(self, rng):
        x = Tensor(rng.normal(size=(2, 3, 5, 7)))
        k = np.zeros((3, 3, 3, 3))
        for c in range(3):
            k[c, c, 1, 1] = 1.0
        out = tc.conv2d(x, Tensor(k), padding=1)
        np.testing.assert_allclose(out.data, x.data, atol=1e-12)

    def test_zero_kernel_gives_bias(self, rng):
        x = Tensor(rng.normal(size=(1, 2, 4, 4)))
        out = tc.conv2d(x, Tensor(np.zeros((3, 2, 3, 3))), Tensor(np.array([1.0, -2.0, 0.5])), padding=1)
        np.testing.assert_allclose(out.data[0, :, 2, 2], [1.0, -2.0, 0.5])

    @pytest.mark.parametrize("stride,padding,dilation", [(1, 0, 1), (2, 1, 1), (1, 2, 2), (4, 3, 1)])
    def test_output_size(self, rng, stride, padding, dilation):
        x = Tensor(rng.normal(size=(1, 2, 16, 12)))
        k = Tensor(rng.normal(size=(3, 2, 3, 3)))
        out = tc.conv2d(x, k, stride=stride, padding=padding, dilation=dilation)
        expect_h = (16 + 2 * padding - dilation * 2 - 1) // stride + 1
        expect_w = (12 + 2 * padding - dilation * 2 - 1) // stride + 1
        assert out.shape == (1, 3, expect_h, expect_w)

    def test_depthwise_scales_each_channel(self, rng):
        x = Tensor(rng.normal(size=(1, 3, 4, 4)))
        k = np.zeros((3, 1, 3, 3))
        k[:, 0, 1, 1] = [1.0, 2.0, 3.0]
        out = tc.conv2d(x, Tensor(k), padding=1, groups=3)
        np.testing.assert_allclose(out.data, x.data * np.array([1.0, 2.0, 3.0])[None, :, None, None], atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            tc.conv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 2, 3, 3))))

    def test_groups_must_divide(self):
        with pytest.raises(DimensionError):
            tc.conv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 1, 3, 3))), groups=2)

    def test_even_kernel_rejected(self):
        with pytest.raises(ContractError):
            tc.conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 2, 2))))

    def test_too_small_input(self):
        with pytest.raises(DimensionError):
            tc.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))))


class TestLinear:
    def test_matrix_vector(self):
        out = tc.linear(Tensor([[1.0, 1.0]]), Tensor([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_allclose(out.data, [[3.0, 7.0]])

    def test_bias(self):
        out = tc.linear(Tensor([[1.0, 0.0]]), Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([0.5, -0.5]))
        np.testing.assert_allclose(out.data, [[1.5, 2.5]])

    def test_last_axis_mismatch(self):
        with pytest.raises(DimensionError):
            tc.linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))


class TestPoolAndResize:
    def test_global_pool(self):
        x = Tensor(np.array([1.0, 3.0]).reshape(1, 1, 1, 2))
        assert tc.global_pool(x, "average").item() == pytest.approx(2.0)
        assert tc.global_pool(x, "max").item() == pytest.approx(3.0)

    def test_global_pool_unknown_mode(self):
        with pytest.raises(ContractError):
            tc.global_pool(Tensor(np.zeros((1, 1, 2, 2))), "median")

    def test_resize_row(self):
        x = Tensor(np.array([0.0, 1.0]).reshape(1, 1, 1, 2))
        out = tc.resize_bilinear(x, 1, 4)
        np.testing.assert_allclose(out.data.reshape(-1), [0.0, 0.25, 0.75, 1.0], atol=1e-7)

    def test_resize_same_size_is_identity(self, rng):
        x = Tensor(rng.normal(size=(1, 2, 5, 5)))
        assert tc.resize_bilinear(x, 5, 5) is x

    def test_resize_stays_within_input_range(self, rng):
        x = Tensor(rng.uniform(-2.0, 3.0, size=(2, 3, 7, 5)))
        for size in [(14, 10), (3, 2), (8, 8)]:
            out = tc.resize_bilinear(x, *size)
            assert out.data.min() >= x.data.min() - 1e-6
            assert out.data.max() <= x.data.max() + 1e-6

    def test_interpolation_rows_sum_to_one(self):
        for n_in, n_out in [(2, 4), (8, 3), (5, 5), (1, 6)]:
            np.testing.assert_allclose(tc.interpolation_matrix(n_in, n_out, np.float64).sum(axis=1), 1.0)


class TestSoftmaxPair:
    def test_equal_inputs(self):
        wa, wb = tc.softmax_pair(t64([0.0]), t64([0.0]))
        assert wa.item() == 0.5 and wb.item() == 0.5

    def test_log_three(self):
        wa, wb = tc.softmax_pair(t64([np.log(3.0)]), t64([0.0]))
        assert wa.item() == pytest.approx(0.75, abs=1e-12)
        assert wb.item() == pytest.approx(0.25, abs=1e-12)

    def test_large_gap(self):
        wa, wb = tc.softmax_pair(t64([50.0]), t64([0.0]))
        assert wa.item() == pytest.approx(1.0, abs=1e-9)
        assert wb.item() == pytest.approx(0.0, abs=1e-9)

    def test_sum_to_one(self, rng):
        a, b = t64(rng.normal(0, 10, 100)), t64(rng.normal(0, 10, 100))
        wa, wb = tc.softmax_pair(a, b)
        np.testing.assert_allclose(wa.data + wb.data, 1.0, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            tc.softmax_pair(t64([0.0]), t64([0.0, 1.0]))


class TestBackward:
    def test_sum(self, rng):
        x = t64(rng.normal(size=(3, 4)), requires_grad=True)
        grads = backward(tc.sum(x), {"x": x})
        np.testing.assert_array_equal(grads["x"].data, np.ones((3, 4)))

    def test_square(self, rng):
        x = t64(rng.normal(size=5), requires_grad=True)
        grads = backward(tc.sum(x * x), {"x": x})
        np.testing.assert_allclose(grads["x"].data, 2 * x.data)

    def test_reused_node_accumulates(self):
        x = t64([2.0], requires_grad=True)
        y = x * 3.0
        grads = backward(tc.sum(y + y), {"x": x})
        assert grads["x"].item() == pytest.approx(6.0)

    def test_overflowing_gradient_names_parameter(self):
        x = t64([1e-300], requires_grad=True)
        y = x * 1e308
        with np.errstate(over="ignore"):
            with pytest.raises(NonFiniteError, match="gradient for 'x'") as info:
                backward(tc.sum(y + y), {"x": x})
        assert info.value.component == "x"

    def test_unused_parameter_gets_zeros(self):
        x = t64([1.0, 2.0], requires_grad=True)
        unused = t64([[5.0]], requires_grad=True)
        grads = backward(tc.sum(x), {"x": x, "unused": unused})
        np.testing.assert_array_equal(grads["unused"].data, [[0.0]])

    def test_constant_result(self):
        x = t64([1.0], requires_grad=True)
        grads = backward(Tensor(np.array(3.0)), {"x": x})
        assert grads["x"].item() == 0.0

    def test_scalar_only(self):
        x = t64([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            backward(x * 2.0, {"x": x})

    def test_sigmoid_conv_matches_differences(self, rng):
        x = t64(rng.normal(size=(1, 2, 5, 5)), requires_grad=True)
        k = t64(rng.normal(0, 0.3, size=(3, 2, 3, 3)), requires_grad=True)
        r = rng.normal(size=(1, 3, 5, 5))

        def f(_):
            return tc.sum(tc.sigmoid(tc.conv2d(x, k, padding=1)) * t64(r))

        assert finite_diff_check(f, NamedTensorSet(x=x, k=k)) < 1e-4

    def test_shape_ops_match_differences(self, rng):
        a = t64(rng.normal(size=(2, 3, 4)), requires_grad=True)
        b = t64(rng.normal(size=(2, 2, 4)), requires_grad=True)
        r = rng.normal(size=(2, 4, 2))

        def f(_):
            joined = tc.concat([a, b], axis=1)
            part = tc.narrow(joined, 1, 1, 4)
            moved = tc.transpose(part, (0, 2, 1))
            return tc.sum(tc.narrow(tc.reshape(moved, (2, 4, 4)), 2, 0, 2) * t64(r))

        assert finite_diff_check(f, NamedTensorSet(a=a, b=b)) < 1e-6

    def test_log_softmax_matches_differences(self, rng):
        z = t64(rng.normal(size=(2, 4, 3, 3)), requires_grad=True)
        r = rng.normal(size=(2, 4, 3, 3))

        def f(_):
            return tc.sum(tc.log_softmax(z, axis=1) * t64(r))

        assert finite_diff_check(f, NamedTensorSet(z=z)) < 1e-4

    def test_resize_matches_differences(self, rng):
        x = t64(rng.normal(size=(1, 2, 3, 4)), requires_grad=True)
        r = rng.normal(size=(1, 2, 7, 5))

        def f(_):
            return tc.sum(tc.resize_bilinear(x, 7, 5) * t64(r))

        assert finite_diff_check(f, NamedTensorSet(x=x)) < 1e-6


class TestFiniteDiffCheck:
    def test_cubic(self, rng):
        p = t64(rng.uniform(0.5, 1.5, size=10), requires_grad=True)
        params = NamedTensorSet(p=p)
        assert finite_diff_check(lambda _: tc.sum(p * p * p), params) < 1e-6

    def test_constant_function(self):
        p = t64([1.0, 2.0], requires_grad=True)
        assert finite_diff_check(lambda _: Tensor(np.array(4.0)), NamedTensorSet(p=p)) == 0.0

    def test_corrupted_gradient_is_caught(self, rng):
        p = t64(rng.uniform(0.5, 1.5, size=6), requires_grad=True)
        params = NamedTensorSet(p=p)

        def f(_):
            return tc.sum(p * p * p)

        good = backward(f(params), params)
        bad = NamedTensorSet(p=Tensor(good["p"].data + 1.0))
        assert finite_diff_check(f, params, analytic=bad) > 1e-2

    def test_nondeterministic_function(self):
        p = t64([1.0], requires_grad=True)
        calls = []

        def f(_):
            calls.append(1)
            return tc.sum(p) + float(len(calls))

        with pytest.raises(OracleError):
            finite_diff_check(f, NamedTensorSet(p=p))

    def test_epsilon_must_be_positive(self):
        p = t64([1.0], requires_grad=True)
        with pytest.raises(ContractError):
            finite_diff_check(lambda _: tc.sum(p), NamedTensorSet(p=p), epsilon=0.0)

    def test_parameters_restored(self, rng):
        p = t64(rng.normal(size=4), requires_grad=True)
        before = p.data.copy()
        finite_diff_check(lambda _: tc.sum(p * p), NamedTensorSet(p=p))
        np.testing.assert_array_equal(p.data, before)


class TestNamedTensorSet:
    def test_collect_paths(self):
        tree = {"a": [Tensor([1.0]), Tensor([2.0], requires_grad=True)], "b": {"c": Tensor([3.0])}}
        named = NamedTensorSet.collect(tree)
        assert list(named) == ["a.0", "a.1", "b.c"]
        assert list(named.trainable()) == ["a.1"]
        assert named.count() == 3

    def test_astype_in_place(self):
        t = Tensor([1.0, 2.0])
        NamedTensorSet(t=t).astype(np.float64)
        assert t.dtype == np.float64
