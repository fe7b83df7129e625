"""Tests for the autodiff tensor: forward values, gradients, errors."""

import numpy as np
import pytest

from scatgen.errors import ContractError, DimensionError, NumericDomainError, ParameterError
from scatgen import tensor as T
from scatgen.tensor import Tensor

from oracles import conv2d_direct, finite_difference_grad


def grad_of(build, *arrays, wrt=0):
    """Backward-pass gradient of scalar build(*tensors) w.r.t. one input."""
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    loss = build(*tensors)
    T.backward(loss)
    return tensors[wrt].grad


def check_against_fd(build, *arrays, wrt=0, rtol=1e-5):
    """Compare reverse-mode gradient to central finite differences."""
    analytic = grad_of(build, *arrays, wrt=wrt)

    def scalar_fn(x):
        args = [np.array(a, copy=True) for a in arrays]
        args[wrt] = x
        out = build(*[Tensor(a) for a in args])
        return float(out.data)

    numeric = finite_difference_grad(scalar_fn, np.array(arrays[wrt], copy=True))
    scale = np.maximum(np.abs(numeric), 1.0)
    np.testing.assert_allclose(analytic / scale, numeric / scale, rtol=0, atol=rtol)


class TestMatmul:

    def test_identity(self):
        out = T.matmul(Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([[3.0, 4.0], [5.0, 6.0]]))
        np.testing.assert_array_equal(out.data, [[3.0, 4.0], [5.0, 6.0]])

    def test_row_times_column(self):
        out = T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.data, [[11.0]])

    def test_identity_is_exact_both_sides(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(5, 5))
        eye = np.eye(5)
        np.testing.assert_array_equal(T.matmul(Tensor(eye), Tensor(a)).data, a)
        np.testing.assert_array_equal(T.matmul(Tensor(a), Tensor(eye)).data, a)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(4, 5))
        b = rng.normal(size=(5, 3))
        check_against_fd(lambda x, y: T.reduce_sum(T.matmul(x, y)), a, b, wrt=0)
        check_against_fd(lambda x, y: T.reduce_sum(T.matmul(x, y)), a, b, wrt=1)

    def test_gradient_of_sum_is_ones_times_bt(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(4, 5))
        b = rng.normal(size=(5, 3))
        g = grad_of(lambda x, y: T.reduce_sum(T.matmul(x, y)), a, b, wrt=0)
        np.testing.assert_allclose(g, np.ones((4, 3)) @ b.T, rtol=1e-12)

    def test_inner_dim_mismatch(self):
        with pytest.raises(DimensionError):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))

    def test_non_2d_rejected(self):
        with pytest.raises(DimensionError):
            T.matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 2))))


class TestElementwise:

    def test_relu_sign_cases(self):
        out = T.relu(Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_leaky_relu_slope(self):
        out = T.leaky_relu(Tensor([-1.0, 2.0]), slope=0.2)
        np.testing.assert_allclose(out.data, [-0.2, 2.0], rtol=1e-12)

    def test_sigmoid_at_zero(self):
        assert T.sigmoid(Tensor([0.0])).data[0] == 0.5

    def test_sigmoid_extremes_finite(self):
        out = T.sigmoid(Tensor([-1000.0, 1000.0]))
        assert np.all(np.isfinite(out.data))
        assert 0.0 <= out.data[0] < 1e-12 and 1.0 - 1e-12 < out.data[1] <= 1.0

    def test_add_broadcast_scalar(self):
        out = Tensor([[1.0, 2.0]]) + 1.0
        np.testing.assert_array_equal(out.data, [[2.0, 3.0]])

    def test_div_by_zero_raises(self):
        with pytest.raises(NumericDomainError):
            T.div(Tensor([1.0]), Tensor([0.0]))

    def test_log_of_negative_raises(self):
        with pytest.raises(NumericDomainError):
            T.log(Tensor([-1.0]))

    def test_exp_overflow_raises(self):
        with pytest.raises(NumericDomainError):
            T.exp(Tensor([1e4]))

    def test_non_broadcastable_shapes(self):
        with pytest.raises(DimensionError):
            T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))))

    def test_clip_values_and_gradient_mask(self):
        x = np.array([-2.0, 0.3, 2.0])
        out = T.clip(Tensor(x), 0.0, 1.0)
        np.testing.assert_array_equal(out.data, [0.0, 0.3, 1.0])
        g = grad_of(lambda t: T.reduce_sum(T.clip(t, 0.0, 1.0)), x)
        np.testing.assert_array_equal(g, [0.0, 1.0, 0.0])

    @pytest.mark.parametrize("op", [T.exp, T.relu, T.sigmoid, T.tanh, T.square, T.absolute,
                                    lambda x: T.leaky_relu(x, 0.2)])
    def test_unary_gradients(self, op):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(3, 4)) + 0.1  # keep away from relu/abs kinks
        check_against_fd(lambda t: T.reduce_sum(op(t)), x)

    @pytest.mark.parametrize("op", [T.add, T.sub, T.mul, T.div])
    def test_binary_gradients(self, op):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(3, 4)) + 3.0  # denominator stays away from 0
        check_against_fd(lambda x, y: T.reduce_sum(op(x, y)), a, b, wrt=0)
        check_against_fd(lambda x, y: T.reduce_sum(op(x, y)), a, b, wrt=1)

    def test_broadcast_bias_gradient(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(4, 3))
        bias = rng.normal(size=(3,))
        check_against_fd(lambda a, b: T.reduce_sum(T.square(T.add(a, b))), x, bias, wrt=1)

    def test_log_gradient(self):
        rng = np.random.default_rng(6)
        x = rng.uniform(0.5, 2.0, size=(3, 3))
        check_against_fd(lambda t: T.reduce_sum(T.log(t)), x)


class TestReduce:

    def test_sum_all(self):
        assert T.reduce_sum(Tensor([[1.0, 2.0], [3.0, 4.0]])).item() == 10.0

    def test_mean_axis0(self):
        out = T.reduce_mean(Tensor([[1.0, 2.0], [3.0, 4.0]]), axis=0)
        np.testing.assert_array_equal(out.data, [2.0, 3.0])

    def test_mean_gradient(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(4, 5))
        check_against_fd(lambda t: T.reduce_mean(t), x)
        check_against_fd(lambda t: T.reduce_sum(T.square(T.reduce_mean(t, axis=0))), x)

    def test_sum_axis_gradient(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(3, 4))
        check_against_fd(lambda t: T.reduce_sum(T.square(T.reduce_sum(t, axis=1))), x)

    def test_invalid_axis(self):
        with pytest.raises(DimensionError):
            T.reduce_sum(Tensor(np.ones((2, 2))), axis=5)

    def test_negative_axis(self):
        out = T.reduce_sum(Tensor([[1.0, 2.0], [3.0, 4.0]]), axis=-1)
        np.testing.assert_array_equal(out.data, [3.0, 7.0])


class TestShapeOps:

    def test_reshape_roundtrip(self):
        x = np.arange(12.0).reshape(3, 4)
        out = T.reshape(Tensor(x), (2, 6))
        np.testing.assert_array_equal(out.data, x.reshape(2, 6))

    def test_reshape_gradient(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(2, 6))
        check_against_fd(lambda t: T.reduce_sum(T.square(T.reshape(t, (3, 4)))), x)

    def test_reshape_bad_size(self):
        with pytest.raises(DimensionError):
            T.reshape(Tensor(np.ones(5)), (2, 3))

    def test_transpose_gradient(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(2, 3, 4))
        check_against_fd(lambda t: T.reduce_sum(T.square(T.transpose(t, (2, 0, 1)))), x)

    def test_transpose_bad_axes(self):
        with pytest.raises(DimensionError):
            T.transpose(Tensor(np.ones((2, 3))), (0, 0))


class TestConv2d:

    def test_ones_full_overlap(self):
        out = T.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))))
        np.testing.assert_array_equal(out.data, [[[[9.0]]]])

    def test_identity_kernel_with_padding(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(2, 1, 5, 5))
        kernel = np.zeros((1, 1, 3, 3))
        kernel[0, 0, 1, 1] = 1.0
        out = T.conv2d(Tensor(x), Tensor(kernel), stride=1, padding=1)
        np.testing.assert_allclose(out.data, x, rtol=1e-12)

    def test_matches_direct_convolution(self):
        rng = np.random.default_rng(13)
        x = rng.normal(size=(2, 3, 7, 7))
        k = rng.normal(size=(4, 3, 3, 3))
        for stride, padding in [(1, 0), (1, 1), (2, 0), (2, 1)]:
            got = T.conv2d(Tensor(x), Tensor(k), stride=stride, padding=padding).data
            want = conv2d_direct(x, k, stride=stride, padding=padding)
            np.testing.assert_allclose(got, want, rtol=1e-10)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(14)
        x = rng.normal(size=(2, 3, 8, 8))
        k = rng.normal(size=(4, 3, 3, 3))
        build = lambda a, b: T.reduce_sum(T.square(T.conv2d(a, b, stride=1, padding=1)))
        check_against_fd(build, x, k, wrt=0, rtol=1e-4)
        check_against_fd(build, x, k, wrt=1, rtol=1e-4)

    def test_strided_gradients(self):
        rng = np.random.default_rng(15)
        x = rng.normal(size=(1, 2, 7, 7))
        k = rng.normal(size=(3, 2, 3, 3))
        build = lambda a, b: T.reduce_sum(T.square(T.conv2d(a, b, stride=2, padding=1)))
        check_against_fd(build, x, k, wrt=0, rtol=1e-4)
        check_against_fd(build, x, k, wrt=1, rtol=1e-4)

    def test_non_integer_output_extent(self):
        with pytest.raises(DimensionError):
            T.conv2d(Tensor(np.ones((1, 1, 6, 6))), Tensor(np.ones((1, 1, 3, 3))), stride=2)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            T.conv2d(Tensor(np.ones((1, 2, 5, 5))), Tensor(np.ones((1, 3, 3, 3))))

    def test_kernel_larger_than_padded_input(self):
        with pytest.raises(DimensionError):
            T.conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))))


class TestUpsampleNearest:

    def test_factor_one_identity(self):
        x = np.arange(8.0).reshape(1, 2, 2, 2)
        out = T.upsample_nearest(Tensor(x), 1)
        np.testing.assert_array_equal(out.data, x)

    def test_factor_two_blocks(self):
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        out = T.upsample_nearest(Tensor(x), 2)
        want = [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]
        np.testing.assert_array_equal(out.data[0, 0], want)

    def test_gradient(self):
        rng = np.random.default_rng(16)
        x = rng.normal(size=(2, 2, 3, 3))
        check_against_fd(lambda t: T.reduce_sum(T.square(T.upsample_nearest(t, 2))), x)

    def test_factor_zero_rejected(self):
        with pytest.raises(ParameterError):
            T.upsample_nearest(Tensor(np.ones((1, 1, 2, 2))), 0)


class TestBatchNorm:

    def _buffers(self, features):
        return np.zeros(features), np.ones(features)

    def test_constant_column_maps_to_beta(self):
        x = np.ones((6, 3)) * np.array([2.0, -1.0, 5.0])
        gamma, beta = np.ones(3), np.array([0.5, 0.0, -0.5])
        mean, var = self._buffers(3)
        out = T.batch_norm(Tensor(x), Tensor(gamma), Tensor(beta), mean, var, training=True)
        np.testing.assert_allclose(out.data, np.broadcast_to(beta, (6, 3)), atol=1e-6)

    def test_standardized_input_passes_through(self):
        rng = np.random.default_rng(17)
        x = rng.normal(size=(200, 4))
        x = (x - x.mean(axis=0)) / x.std(axis=0)
        mean, var = self._buffers(4)
        out = T.batch_norm(Tensor(x), Tensor(np.ones(4)), Tensor(np.zeros(4)), mean, var, training=True)
        np.testing.assert_allclose(out.data, x, atol=1e-3)

    def test_running_stats_drive_eval_mode(self):
        rng = np.random.default_rng(18)
        x = rng.normal(loc=3.0, scale=2.0, size=(64, 2))
        gamma, beta = np.ones(2), np.zeros(2)
        mean, var = self._buffers(2)
        for _ in range(200):
            T.batch_norm(Tensor(x), Tensor(gamma), Tensor(beta), mean, var, training=True)
        np.testing.assert_allclose(mean, x.mean(axis=0), atol=1e-3)
        out = T.batch_norm(Tensor(x), Tensor(gamma), Tensor(beta), mean, var, training=False)
        np.testing.assert_allclose(out.data.mean(axis=0), 0.0, atol=1e-2)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(19)
        x = rng.normal(size=(8, 3))
        gamma = rng.uniform(0.5, 1.5, size=3)
        beta = rng.normal(size=3)

        def build(a, g, b):
            mean, var = self._buffers(3)
            return T.reduce_sum(T.square(T.batch_norm(a, g, b, mean, var, training=True)))

        for wrt in range(3):
            check_against_fd(build, x, gamma, beta, wrt=wrt, rtol=1e-4)

    def test_eval_mode_gradient(self):
        rng = np.random.default_rng(20)
        x = rng.normal(size=(5, 3))
        gamma = rng.uniform(0.5, 1.5, size=3)
        beta = rng.normal(size=3)
        run_mean = rng.normal(size=3)
        run_var = rng.uniform(0.5, 2.0, size=3)

        def build(a, g, b):
            return T.reduce_sum(T.square(T.batch_norm(
                a, g, b, run_mean.copy(), run_var.copy(), training=False)))

        for wrt in range(3):
            check_against_fd(build, x, gamma, beta, wrt=wrt, rtol=1e-4)

    def test_small_batch_rejected_in_training(self):
        mean, var = self._buffers(3)
        with pytest.raises(ParameterError):
            T.batch_norm(Tensor(np.ones((1, 3))), Tensor(np.ones(3)), Tensor(np.zeros(3)),
                         mean, var, training=True)


class TestBackward:

    def test_grad_of_sum_is_ones(self):
        w = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        T.backward(T.reduce_sum(w))
        np.testing.assert_array_equal(w.grad, [1.0, 1.0, 1.0])

    def test_grad_of_sum_of_squares(self):
        w = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        T.backward(T.reduce_sum(T.square(w)))
        np.testing.assert_array_equal(w.grad, [2.0, 4.0, 6.0])

    def test_composite_mlp_gradient(self):
        rng = np.random.default_rng(21)
        x = rng.normal(size=(5, 4))
        w1 = rng.normal(size=(4, 6)) * 0.5
        b1 = rng.normal(size=(6,)) * 0.1
        w2 = rng.normal(size=(6, 2)) * 0.5

        def build(xx, a, b, c):
            h = T.relu(T.add(T.matmul(xx, a), b))
            out = T.sigmoid(T.matmul(h, c))
            return T.reduce_mean(T.square(out))

        for wrt in (1, 2, 3):
            check_against_fd(build, x, w1, b1, w2, wrt=wrt, rtol=1e-4)

    def test_reused_node_accumulates(self):
        w = Tensor([2.0], requires_grad=True)
        y = T.mul(w, w)  # dy/dw = 2w through both parents
        T.backward(T.reduce_sum(y))
        np.testing.assert_allclose(w.grad, [4.0])

    def test_non_scalar_loss_rejected(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            T.backward(T.square(w))

    def test_second_backward_rejected(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        loss = T.reduce_sum(T.square(w))
        T.backward(loss)
        with pytest.raises(ContractError):
            T.backward(loss)

    def test_shared_subgraph_consumed(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        mid = T.square(w)
        T.backward(T.reduce_sum(mid))
        with pytest.raises(ContractError):
            T.backward(T.reduce_mean(mid))

    def test_leaves_survive_for_next_step(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        T.backward(T.reduce_sum(T.square(w)))
        w.grad = None
        T.backward(T.reduce_sum(T.square(w)))  # fresh graph over the same leaf
        np.testing.assert_array_equal(w.grad, [2.0, 4.0])

    def test_detach_blocks_gradient(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        loss = T.reduce_sum(T.mul(w.detach(), w))
        T.backward(loss)
        np.testing.assert_array_equal(w.grad, [1.0, 2.0])  # only the tracked factor

    def test_grads_deterministic(self):
        rng = np.random.default_rng(22)
        x = rng.normal(size=(4, 4))
        runs = []
        for _ in range(2):
            w = Tensor(x, requires_grad=True)
            loss = T.reduce_sum(T.add(T.mul(w, 2.0), T.square(w)))
            T.backward(loss)
            runs.append(w.grad.copy())
        np.testing.assert_array_equal(runs[0], runs[1])
