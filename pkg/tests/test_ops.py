"""Layer operation tests: contracts, oracle equivalence, finite-difference gradients."""

import numpy as np
import pytest

from deepcaptcha import ops
from deepcaptcha.ops import ShapeError

from oracles import (
    assert_grads_close,
    conv2d_naive,
    dense_naive,
    finite_diff_grad,
)


def spaced_random(rng, shape, lo=-1.0, hi=1.0, min_gap=1e-3):
    """Random values with all pairwise gaps >= min_gap and |value| >= min_gap.

    Keeps finite-difference probes away from ReLU/max-pool kinks so central
    differences stay valid.
    """
    n = int(np.prod(shape))
    span = np.arange(1, n + 1, dtype=np.float64)
    vals = span * max(min_gap * 2, (hi - lo) / (n + 1))
    vals += lo
    vals[vals > -min_gap] += 2 * min_gap  # clear a band around zero
    return rng.permutation(vals).reshape(shape)


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------

class TestConv2d:
    def test_all_ones_padding_arithmetic(self):
        x = np.ones((1, 1, 3, 3), np.float32)
        k = np.ones((1, 1, 3, 3), np.float32)
        b = np.zeros(1, np.float32)
        y = ops.conv2d_forward(x, k, b)
        assert y[0, 0, 1, 1] == 9.0
        for cy, cx in [(0, 0), (0, 2), (2, 0), (2, 2)]:
            assert y[0, 0, cy, cx] == 4.0

    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 1, 5, 7)).astype(np.float32)
        k = np.zeros((1, 1, 3, 3), np.float32)
        k[0, 0, 1, 1] = 1.0
        y = ops.conv2d_forward(x, k, np.zeros(1, np.float32))
        np.testing.assert_array_equal(y[:, 0], x[:, 0])

    def test_matches_naive_oracle_exact_on_integers(self):
        # integer-valued floats make every summation order exact, so the
        # im2col path and the 6-loop reference must agree bitwise
        for seed in range(10):
            rng = np.random.default_rng(seed)
            x = rng.integers(-8, 9, (2, 1, 7, 7)).astype(np.float32)
            k = rng.integers(-8, 9, (3, 1, 5, 5)).astype(np.float32)
            b = rng.integers(-8, 9, 3).astype(np.float32)
            np.testing.assert_array_equal(
                ops.conv2d_forward(x, k, b), conv2d_naive(x, k, b)
            )

    def test_matches_naive_oracle_random_floats(self):
        for seed in range(5):
            rng = np.random.default_rng(100 + seed)
            dims = rng.integers(1, 9, size=4)
            N, C, H, W = (int(d) for d in dims)
            K = int(rng.integers(1, 5))
            x = rng.standard_normal((N, C, H, W)).astype(np.float32)
            k = rng.standard_normal((K, C, 3, 3)).astype(np.float32)
            b = rng.standard_normal(K).astype(np.float32)
            np.testing.assert_allclose(
                ops.conv2d_forward(x, k, b), conv2d_naive(x, k, b), rtol=1e-5, atol=1e-5
            )

    def test_shape_errors_name_dimension(self):
        x = np.zeros((1, 2, 4, 4), np.float32)
        k = np.zeros((3, 5, 3, 3), np.float32)
        with pytest.raises(ShapeError, match="channel dim 5"):
            ops.conv2d_forward(x, k, np.zeros(3, np.float32))
        with pytest.raises(ShapeError, match="odd"):
            ops.conv2d_forward(x, np.zeros((3, 2, 4, 4), np.float32), np.zeros(3, np.float32))

    def test_backward_zero_grad(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((1, 2, 4, 4)).astype(np.float32)
        k = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
        g = ops.conv2d_backward(x, k, np.zeros((1, 3, 4, 4), np.float32))
        assert not g.input_grad.any()
        assert not g.param_grads[0].any()
        assert not g.param_grads[1].any()

    def test_backward_identity_kernel_routes_grad(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((1, 1, 3, 3)).astype(np.float32)
        k = np.zeros((1, 1, 3, 3), np.float32)
        k[0, 0, 1, 1] = 1.0
        og = rng.standard_normal((1, 1, 3, 3)).astype(np.float32)
        g = ops.conv2d_backward(x, k, og)
        np.testing.assert_allclose(g.input_grad, og, rtol=1e-6)

    @pytest.mark.parametrize("seed", range(20))
    def test_backward_matches_finite_difference(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((2, 2, 5, 6))
        k = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        w = rng.standard_normal((2, 3, 5, 6))  # fixed projection -> scalar loss

        g = ops.conv2d_backward(x, k, w)
        assert_grads_close(
            g.input_grad, finite_diff_grad(lambda v: (ops.conv2d_forward(v, k, b) * w).sum(), x)
        )
        assert_grads_close(
            g.param_grads[0],
            finite_diff_grad(lambda v: (ops.conv2d_forward(x, v, b) * w).sum(), k),
        )
        assert_grads_close(
            g.param_grads[1],
            finite_diff_grad(lambda v: (ops.conv2d_forward(x, k, v) * w).sum(), b),
        )


# ---------------------------------------------------------------------------
# maxpool
# ---------------------------------------------------------------------------

class TestMaxpool:
    def test_single_window(self):
        x = np.array([[1, 2], [3, 4]], np.float32).reshape(1, 1, 2, 2)
        y, idx = ops.maxpool2x2_forward(x)
        assert y.shape == (1, 1, 1, 1)
        assert y[0, 0, 0, 0] == 4.0
        assert idx.argmax[0, 0, 0, 0] == 3

    def test_pipeline_shape_floor(self):
        x = np.zeros((1, 1, 25, 67), np.float32)
        y, _ = ops.maxpool2x2_forward(x)
        assert y.shape == (1, 1, 12, 33)

    def test_constant_input_ties_to_corner(self):
        x = np.full((1, 1, 4, 4), 7.0, np.float32)
        y, idx = ops.maxpool2x2_forward(x)
        assert (y == 7.0).all()
        assert (idx.argmax == 0).all()
        dx = ops.maxpool2x2_backward(idx, np.ones_like(y))
        expect = np.zeros((4, 4), np.float32)
        expect[0::2, 0::2] = 1.0
        np.testing.assert_array_equal(dx[0, 0], expect)

    def test_backward_simple(self):
        x = np.array([[1, 2], [3, 4]], np.float32).reshape(1, 1, 2, 2)
        _, idx = ops.maxpool2x2_forward(x)
        dx = ops.maxpool2x2_backward(idx, np.ones((1, 1, 1, 1), np.float32))
        np.testing.assert_array_equal(dx[0, 0], [[0, 0], [0, 1]])

    def test_zero_grad(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 3, 6, 8)).astype(np.float32)
        _, idx = ops.maxpool2x2_forward(x)
        dx = ops.maxpool2x2_backward(idx, np.zeros((2, 3, 3, 4), np.float32))
        assert not dx.any()

    def test_odd_dims_dropped(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((1, 1, 5, 7)).astype(np.float32)
        y, idx = ops.maxpool2x2_forward(x)
        assert y.shape == (1, 1, 2, 3)
        dx = ops.maxpool2x2_backward(idx, np.ones_like(y))
        assert not dx[:, :, 4, :].any() and not dx[:, :, :, 6].any()

    def test_too_small_raises(self):
        with pytest.raises(ShapeError, match=">= 2x2"):
            ops.maxpool2x2_forward(np.zeros((1, 1, 1, 4), np.float32))

    def test_scatter_ones_sum_equals_output_count(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((3, 4, 7, 9)).astype(np.float32)
        y, idx = ops.maxpool2x2_forward(x)
        dx = ops.maxpool2x2_backward(idx, np.ones_like(y))
        assert dx.sum() == y.size

    @pytest.mark.parametrize("seed", range(20))
    def test_backward_matches_finite_difference(self, seed):
        rng = np.random.default_rng(seed)
        x = spaced_random(rng, (2, 2, 4, 6))
        w = rng.standard_normal((2, 2, 2, 3))

        def loss(v):
            y, _ = ops.maxpool2x2_forward(v)
            return (y * w).sum()

        _, idx = ops.maxpool2x2_forward(x)
        dx = ops.maxpool2x2_backward(idx, w)
        assert_grads_close(dx, finite_diff_grad(loss, x))

    def test_hot_path_matches_public_op(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            x = rng.standard_normal((2, 3, 7, 9)).astype(np.float32)
            a = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
            y_pub, idx = ops.maxpool2x2_forward(x)
            y_hot = ops.pool_fwd_nhwc(a)
            np.testing.assert_array_equal(y_hot.transpose(0, 3, 1, 2), y_pub)
            g = rng.standard_normal(y_pub.shape).astype(np.float32)
            dx_pub = ops.maxpool2x2_backward(idx, g)
            dx_hot = ops.pool_bwd_nhwc(a, y_hot, np.ascontiguousarray(g.transpose(0, 2, 3, 1)))
            np.testing.assert_array_equal(dx_hot.transpose(0, 3, 1, 2), dx_pub)

    def test_hot_path_tie_break_matches_on_constant(self):
        a = np.zeros((1, 4, 4, 2), np.float32)
        y = ops.pool_fwd_nhwc(a)
        g = np.ones_like(y)
        dx = ops.pool_bwd_nhwc(a, y, g)
        expect = np.zeros((4, 4), np.float32)
        expect[0::2, 0::2] = 1.0
        np.testing.assert_array_equal(dx[0, :, :, 0], expect)


# ---------------------------------------------------------------------------
# dense
# ---------------------------------------------------------------------------

class TestDense:
    def test_identity_weights(self):
        x = np.random.default_rng(0).standard_normal((3, 4)).astype(np.float32)
        y = ops.dense_forward(x, np.eye(4, dtype=np.float32), np.zeros(4, np.float32))
        np.testing.assert_array_equal(y, x)

    def test_zero_weights_bias_rows(self):
        x = np.random.default_rng(1).standard_normal((3, 4)).astype(np.float32)
        b = np.array([1.0, -2.0], np.float32)
        y = ops.dense_forward(x, np.zeros((4, 2), np.float32), b)
        for row in y:
            np.testing.assert_array_equal(row, b)

    def test_matches_naive_triple_loop(self):
        rng = np.random.default_rng(2)
        x = rng.integers(-5, 6, (3, 4)).astype(np.float32)
        w = rng.integers(-5, 6, (4, 2)).astype(np.float32)
        b = rng.integers(-5, 6, 2).astype(np.float32)
        np.testing.assert_array_equal(ops.dense_forward(x, w, b), dense_naive(x, w, b))

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError, match="feature dim 4"):
            ops.dense_forward(np.zeros((2, 4), np.float32), np.zeros((5, 3), np.float32), np.zeros(3, np.float32))

    def test_backward_zero_grad(self):
        g = ops.dense_backward(
            np.ones((2, 3), np.float32), np.ones((3, 4), np.float32), np.zeros((2, 4), np.float32)
        )
        assert not g.input_grad.any() and not g.param_grads[0].any()

    def test_backward_scalar_chain_rule(self):
        x = np.array([[2.0]])
        w = np.array([[3.0]])
        og = np.array([[5.0]])
        g = ops.dense_backward(x, w, og)
        assert g.input_grad[0, 0] == 15.0  # w * out_grad
        assert g.param_grads[0][0, 0] == 10.0  # x * out_grad
        assert g.param_grads[1][0] == 5.0

    @pytest.mark.parametrize("seed", range(20))
    def test_backward_matches_finite_difference(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((3, 4))
        w = rng.standard_normal((4, 2))
        b = rng.standard_normal(2)
        proj = rng.standard_normal((3, 2))
        g = ops.dense_backward(x, w, proj)
        assert_grads_close(
            g.input_grad, finite_diff_grad(lambda v: (ops.dense_forward(v, w, b) * proj).sum(), x)
        )
        assert_grads_close(
            g.param_grads[0],
            finite_diff_grad(lambda v: (ops.dense_forward(x, v, b) * proj).sum(), w),
        )
        assert_grads_close(
            g.param_grads[1],
            finite_diff_grad(lambda v: (ops.dense_forward(x, w, v) * proj).sum(), b),
        )


# ---------------------------------------------------------------------------
# relu / dropout
# ---------------------------------------------------------------------------

class TestRelu:
    def test_values(self):
        x = np.array([-1.0, 0.0, 2.0], np.float32)
        np.testing.assert_array_equal(ops.relu(x), [0.0, 0.0, 2.0])

    def test_backward_subgradient_at_zero(self):
        x = np.array([-1.0, 0.0, 2.0], np.float32)
        og = np.array([5.0, 5.0, 5.0], np.float32)
        np.testing.assert_array_equal(ops.relu_backward(x, og), [0.0, 0.0, 5.0])

    @pytest.mark.parametrize("seed", range(20))
    def test_backward_matches_finite_difference(self, seed):
        rng = np.random.default_rng(seed)
        x = spaced_random(rng, (4, 5))
        w = rng.standard_normal((4, 5))
        dx = ops.relu_backward(x, w)
        assert_grads_close(dx, finite_diff_grad(lambda v: (ops.relu(v) * w).sum(), x))


class TestDropout:
    def test_rate_zero_identity(self):
        rng = np.random.default_rng(0)
        x = np.random.default_rng(1).standard_normal((5, 5)).astype(np.float32)
        y, mask = ops.dropout(x, 0.0, "train", rng)
        np.testing.assert_array_equal(y, x)
        np.testing.assert_array_equal(mask, np.ones_like(x))

    def test_infer_identity(self):
        rng = np.random.default_rng(0)
        x = np.random.default_rng(1).standard_normal((5, 5)).astype(np.float32)
        y, _ = ops.dropout(x, 0.3, "infer", rng)
        np.testing.assert_array_equal(y, x)

    def test_empirical_drop_fraction(self):
        rng = np.random.default_rng(42)
        x = np.ones(1_000_000, np.float32)
        y, mask = ops.dropout(x, 0.3, "train", rng)
        dropped = float((y == 0).mean())
        assert abs(dropped - 0.3) < 0.005
        # survivors carry the inverse-keep scale
        np.testing.assert_allclose(y[y != 0], 1.0 / 0.7, rtol=1e-6)
        np.testing.assert_array_equal(y, x * mask)

    def test_bad_rate_rejected(self):
        rng = np.random.default_rng(0)
        for rate in (-0.1, 1.0, 1.5):
            with pytest.raises(ValueError, match="rate"):
                ops.dropout(np.ones(3, np.float32), rate, "train", rng)

    def test_seeded_determinism(self):
        x = np.ones((100, 100), np.float32)
        y1, _ = ops.dropout(x, 0.3, "train", np.random.default_rng(7))
        y2, _ = ops.dropout(x, 0.3, "train", np.random.default_rng(7))
        np.testing.assert_array_equal(y1, y2)


# ---------------------------------------------------------------------------
# sigmoid / softmax / bce
# ---------------------------------------------------------------------------

class TestSigmoid:
    def test_zero(self):
        assert ops.sigmoid(np.array([0.0]))[0] == 0.5

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(100) * 5
        s = ops.sigmoid(x) + ops.sigmoid(-x)
        np.testing.assert_allclose(s, 1.0, atol=1e-6)

    def test_large_negative_no_overflow(self):
        with np.errstate(over="raise"):
            v = ops.sigmoid(np.array([-100.0], np.float32))
        assert v[0] == pytest.approx(0.0, abs=1e-7)
        # agrees with a float64 direct evaluation to 32-bit precision
        ref = 1.0 / (1.0 + np.exp(100.0))
        assert abs(float(v[0]) - ref) < 1e-7

    def test_backward_matches_finite_difference(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            x = rng.standard_normal(10)
            w = rng.standard_normal(10)
            y = ops.sigmoid(x)
            assert_grads_close(
                ops.sigmoid_backward(y, w),
                finite_diff_grad(lambda v: (ops.sigmoid(v) * w).sum(), x),
            )


class TestSoftmax:
    def test_uniform_on_zeros(self):
        y = ops.softmax(np.zeros(10))
        np.testing.assert_allclose(y, 0.1, atol=1e-12)

    def test_shift_invariance(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(10)
        np.testing.assert_allclose(ops.softmax(x), ops.softmax(x + 37.5), atol=1e-12)

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(10).astype(np.float32)
        direct = np.exp(x.astype(np.float64))
        direct /= direct.sum()
        np.testing.assert_allclose(ops.softmax(x), direct, atol=1e-6)

    def test_slices_sum_to_one(self):
        rng = np.random.default_rng(2)
        x = (rng.standard_normal((4, 3, 10)) * 5).astype(np.float32)
        y = ops.softmax(x)
        assert ((y > 0) & (y < 1)).all()
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-6)

    def test_backward_matches_finite_difference(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            x = rng.standard_normal((3, 5))
            w = rng.standard_normal((3, 5))
            y = ops.softmax(x)
            assert_grads_close(
                ops.softmax_backward(y, w),
                finite_diff_grad(lambda v: (ops.softmax(v) * w).sum(), x),
            )


class TestBce:
    def test_perfect_prediction(self):
        loss, _ = ops.bce_loss(np.array([1.0]), np.array([1.0]))
        assert loss == pytest.approx(0.0, abs=1e-6)

    def test_half_prediction_is_ln2(self):
        loss, _ = ops.bce_loss(np.array([0.5]), np.array([1.0]))
        assert loss == pytest.approx(np.log(2.0), rel=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ops.bce_loss(np.zeros(3), np.zeros(4))

    def test_gradient_matches_finite_difference(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            p = rng.uniform(0.05, 0.95, (4, 6))
            y = (rng.random((4, 6)) < 0.5).astype(np.float64)
            _, grad = ops.bce_loss(p, y)
            num = finite_diff_grad(lambda v: ops.bce_loss(v, y)[0], p, h=1e-7)
            assert_grads_close(grad, num, rtol=1e-4)
