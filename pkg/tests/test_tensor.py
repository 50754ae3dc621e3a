"""Unit tests for the autodiff tensor engine."""

import numpy as np
import pytest

from corrtrack import tensor as T
from corrtrack.tensor import BatchNormState, Tensor


class TestConv2d:
    def test_identity_1x1_kernel(self):
        x = Tensor(np.random.default_rng(0).normal(size=(1, 1, 1, 1)))
        k = Tensor(np.ones((1, 1, 1, 1)))
        out = T.conv2d(x, k, 1, "same")
        np.testing.assert_allclose(out.data, x.data)

    def test_ones_3x3_valid_sums_to_nine(self):
        x = Tensor(np.ones((1, 3, 3, 1)))
        k = Tensor(np.ones((3, 3, 1, 1)))
        out = T.conv2d(x, k, 1, "valid")
        assert out.shape == (1, 1, 1, 1)
        assert out.data.item() == pytest.approx(9.0)

    @pytest.mark.parametrize("h,w", [(6, 8), (5, 7), (10, 3)])
    def test_stride2_same_dims_are_ceil_half(self, h, w):
        x = Tensor(np.zeros((1, h, w, 2)))
        k = Tensor(np.zeros((3, 3, 2, 4)))
        out = T.conv2d(x, k, 2, "same")
        assert out.shape == (1, -(-h // 2), -(-w // 2), 4)

    def test_channel_mismatch_rejected(self):
        x = Tensor(np.zeros((1, 4, 4, 3)))
        k = Tensor(np.zeros((3, 3, 2, 4)))
        with pytest.raises(ValueError, match="channels"):
            T.conv2d(x, k)

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            T.conv2d(Tensor(np.zeros((1, 4, 4, 1))), Tensor(np.zeros((2, 2, 1, 1))))


class TestBatchNorm:
    def test_constant_channel_returns_beta(self):
        x = Tensor(np.full((2, 3, 3, 2), 7.0))
        gamma = Tensor(np.array([1.0, 2.0]))
        beta = Tensor(np.array([0.5, -1.0]))
        st = BatchNormState.create(2)
        out = T.batch_norm(x, gamma, beta, st, training=True)
        np.testing.assert_allclose(out.data[..., 0], 0.5, atol=1e-6)
        np.testing.assert_allclose(out.data[..., 1], -1.0, atol=1e-6)

    def test_train_mode_normalizes(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(5.0, 2.0, (8, 6, 6, 3)))
        st = BatchNormState.create(3)
        out = T.batch_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), st, True)
        flat = out.data.reshape(-1, 3)
        np.testing.assert_allclose(flat.mean(axis=0), 0.0, atol=1e-6)
        np.testing.assert_allclose(flat.std(axis=0), 1.0, atol=1e-3)

    def test_eval_identity_statistics(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(size=(2, 4, 4, 2)))
        gamma = Tensor(np.array([2.0, 3.0]))
        beta = Tensor(np.array([-1.0, 0.5]))
        st = BatchNormState.create(2, eps=1e-12)
        out = T.batch_norm(x, gamma, beta, st, training=False)
        np.testing.assert_allclose(out.data, gamma.data * x.data + beta.data,
                                   atol=1e-9)

    def test_bad_eps_rejected(self):
        with pytest.raises(ValueError):
            BatchNormState.create(2, eps=-1.0)


class TestElementwise:
    def test_sigmoid_zero(self):
        assert T.sigmoid(Tensor(np.zeros(()))).data.item() == pytest.approx(0.5)

    def test_cosine_self_similarity(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            v = Tensor(rng.normal(size=(1, 9)))
            out = T.cosine_similarity(v, v)
            assert abs(out.data.item() - 1.0) < 1e-12

    def test_cosine_range(self):
        rng = np.random.default_rng(4)
        a = Tensor(rng.normal(size=(100, 7)))
        b = Tensor(rng.normal(size=(100, 7)))
        out = T.cosine_similarity(a, b).data
        assert np.all(out <= 1.0 + 1e-12) and np.all(out >= -1.0 - 1e-12)

    def test_max_pool_peak_fixed_point(self):
        x = np.zeros((1, 5, 5, 1))
        x[0, 2, 3, 0] = 4.0
        out = T.max_pool2d(Tensor(x), 3, 1, "same")
        assert out.data[0, 2, 3, 0] == 4.0

    def test_relu_and_softplus_values(self):
        x = Tensor(np.array([-2.0, 0.0, 3.0]))
        np.testing.assert_allclose(T.relu(x).data, [0.0, 0.0, 3.0])
        np.testing.assert_allclose(T.softplus(x).data,
                                   np.log1p(np.exp([-2.0, 0.0, 3.0])), atol=1e-12)


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.random.default_rng(5).normal(size=(3, 4)), requires_grad=True)
        T.tsum(x).backward()
        np.testing.assert_allclose(x.grad, np.ones((3, 4)))

    def test_sum_of_squares_gradient(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        T.tsum(x ** 2.0).backward()
        np.testing.assert_allclose(x.grad, [2.0, 4.0])

    def test_detached_leaf_gets_no_grad(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=False)
        y = Tensor(np.array([3.0, 4.0]), requires_grad=True)
        T.tsum(x * y).backward()
        assert x.grad is None
        np.testing.assert_allclose(y.grad, [1.0, 2.0])

    def test_non_scalar_backward_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            (x * 2.0).backward()

    def test_grad_accumulates_until_reset(self):
        x = Tensor(np.array([1.0]), requires_grad=True)
        T.tsum(x * 3.0).backward()
        T.tsum(x * 3.0).backward()
        np.testing.assert_allclose(x.grad, [6.0])
        x.zero_grad()
        T.tsum(x * 3.0).backward()
        np.testing.assert_allclose(x.grad, [3.0])

    def test_broadcast_gradient_shapes(self):
        a = Tensor(np.ones((2, 3)), requires_grad=True)
        b = Tensor(np.ones(3), requires_grad=True)
        T.tsum(a * b).backward()
        assert a.grad.shape == (2, 3)
        assert b.grad.shape == (3,)
        np.testing.assert_allclose(b.grad, [2.0, 2.0, 2.0])


class TestShapes:
    def test_concat_and_reshape_round_trip(self):
        a = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        b = Tensor(np.arange(4.0).reshape(2, 2), requires_grad=True)
        out = T.reshape(T.concat([a, b], axis=1), (10,))
        T.tsum(out * out).backward()
        np.testing.assert_allclose(a.grad, 2 * a.data)
        np.testing.assert_allclose(b.grad, 2 * b.data)

    def test_upsample2x_nearest(self):
        x = Tensor(np.array([[[[1.0], [2.0]], [[3.0], [4.0]]]]))
        out = T.upsample2x(x, 4, 4)
        assert out.shape == (1, 4, 4, 1)
        np.testing.assert_allclose(out.data[0, :2, :2, 0], 1.0)
        np.testing.assert_allclose(out.data[0, 2:, 2:, 0], 4.0)

    def test_getitem_backward_scatters(self):
        x = Tensor(np.arange(5.0), requires_grad=True)
        T.tsum(x[1:3] * 2.0).backward()
        np.testing.assert_allclose(x.grad, [0.0, 2.0, 2.0, 0.0, 0.0])
