import math

import numpy as np
import numpy.testing as npt
import pytest

from conftest import central_difference, rel_error
from seqctc.errors import NumericError, ShapeError
from seqctc.layers import (
    conv2d_backward,
    conv2d_forward,
    eltwise_sum_backward,
    eltwise_sum_forward,
    inner_product_backward,
    inner_product_forward,
    lstm_backward,
    lstm_bias_init,
    lstm_forward,
    maxpool2d_backward,
    maxpool2d_forward,
    permute_backward,
    permute_forward,
    relu_backward,
    relu_forward,
    reverse_backward,
    reverse_forward,
    sigmoid,
    softmax_per_frame,
    uniform_fan_in,
)

FD_TOL = 1e-4


class TestConv2d:
    def test_ones_kernel_counts_overlap(self):
        x = np.ones((1, 1, 3, 3))
        w = np.ones((1, 1, 3, 3))
        b = np.zeros(1)
        out, _ = conv2d_forward(x, w, b, stride=1, pad=1)
        expect = np.array([[4, 6, 4], [6, 9, 6], [4, 6, 4]], dtype=float)
        npt.assert_array_equal(out[0, 0], expect)

    def test_center_tap_kernel_is_identity(self, rng):
        x = rng.normal(size=(2, 1, 3, 3))
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0
        out, _ = conv2d_forward(x, w, np.zeros(1), stride=1, pad=1)
        npt.assert_allclose(out, x, atol=0)

    @pytest.mark.parametrize(
        "size,k,s,p,expect",
        [(32, 5, 1, 1, 30), (30, 3, 1, 0, 28), (28, 3, 2, 1, 14), (7, 1, 2, 0, 4)],
    )
    def test_output_size_formula(self, size, k, s, p, expect):
        assert (size + 2 * p - k) // s + 1 == expect
        x = np.zeros((1, 1, size, size))
        w = np.zeros((1, 1, k, k))
        out, _ = conv2d_forward(x, w, np.zeros(1), stride=s, pad=p)
        assert out.shape == (1, 1, expect, expect)

    def test_kernel_larger_than_padded_input(self):
        x = np.zeros((1, 1, 3, 3))
        w = np.zeros((1, 1, 5, 5))
        with pytest.raises(ShapeError):
            conv2d_forward(x, w, np.zeros(1), stride=1, pad=0)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            conv2d_forward(np.zeros((1, 3, 4, 4)), np.zeros((2, 2, 3, 3)), np.zeros(2))

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
    def test_gradients_match_finite_differences(self, rng, stride, pad):
        x = rng.normal(size=(2, 3, 5, 6))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        out, cache = conv2d_forward(x, w, b, stride=stride, pad=pad)
        r = rng.normal(size=out.shape)
        dx, dw, db = conv2d_backward(r, cache)

        fd_x = central_difference(lambda v: float((conv2d_forward(v, w, b, stride, pad)[0] * r).sum()), x.copy())
        fd_w = central_difference(lambda v: float((conv2d_forward(x, v, b, stride, pad)[0] * r).sum()), w.copy())
        fd_b = central_difference(lambda v: float((conv2d_forward(x, w, v, stride, pad)[0] * r).sum()), b.copy())
        assert rel_error(dx, fd_x) <= FD_TOL
        assert rel_error(dw, fd_w) <= FD_TOL
        assert rel_error(db, fd_b) <= FD_TOL


class TestMaxPool:
    def test_constant_input_constant_output(self):
        x = np.full((1, 2, 4, 4), 3.5)
        out, _ = maxpool2d_forward(x, 3, 1)
        npt.assert_array_equal(out, np.full((1, 2, 2, 2), 3.5))

    def test_spike_reaches_every_containing_window(self):
        x = np.zeros((1, 1, 4, 4))
        x[0, 0, 1, 1] = 9.0
        out, _ = maxpool2d_forward(x, 3, 1)
        npt.assert_array_equal(out[0, 0], np.array([[9.0, 9.0], [9.0, 9.0]]))

    def test_tie_routes_to_first_scan_position(self):
        x = np.ones((1, 1, 2, 2))
        out, cache = maxpool2d_forward(x, 2, 2)
        dx = maxpool2d_backward(np.array([[[[5.0]]]]), cache)
        npt.assert_array_equal(dx[0, 0], np.array([[5.0, 0.0], [0.0, 0.0]]))

    @pytest.mark.parametrize("k,s", [(3, 1), (2, 2)])
    def test_gradient_matches_finite_differences(self, rng, k, s):
        # random continuous values make ties measure-zero
        x = rng.normal(size=(2, 2, 6, 6))
        out, cache = maxpool2d_forward(x, k, s)
        r = rng.normal(size=out.shape)
        dx = maxpool2d_backward(r, cache)
        fd = central_difference(lambda v: float((maxpool2d_forward(v, k, s)[0] * r).sum()), x.copy())
        assert rel_error(dx, fd) <= FD_TOL


class TestReluAndEltwise:
    def test_relu_forward(self):
        out, _ = relu_forward(np.array([-2.0, 0.0, 3.0]))
        npt.assert_array_equal(out, [0.0, 0.0, 3.0])

    def test_relu_gradient(self, rng):
        x = rng.normal(size=(3, 4)) + 0.5  # keep away from the kink
        x[np.abs(x) < 1e-2] = 0.5
        out, cache = relu_forward(x)
        r = rng.normal(size=x.shape)
        dx = relu_backward(r, cache)
        fd = central_difference(lambda v: float((relu_forward(v)[0] * r).sum()), x.copy())
        assert rel_error(dx, fd) <= FD_TOL

    def test_sum_identity(self, rng):
        x = rng.normal(size=(2, 3))
        out, _ = eltwise_sum_forward(x, np.zeros_like(x))
        npt.assert_array_equal(out, x)

    def test_sum_gradient_passes_through(self, rng):
        _, cache = eltwise_sum_forward(np.zeros((2, 2)), np.zeros((2, 2)))
        dout = rng.normal(size=(2, 2))
        da, db = eltwise_sum_backward(dout, cache)
        npt.assert_array_equal(da, dout)
        npt.assert_array_equal(db, dout)

    def test_sum_shape_mismatch(self):
        with pytest.raises(ShapeError):
            eltwise_sum_forward(np.zeros((2, 2)), np.zeros((2, 3)))


class TestInnerProduct:
    def test_identity_weights(self, rng):
        x = rng.normal(size=(2, 4))
        out, _ = inner_product_forward(x, np.eye(4), np.zeros(4))
        npt.assert_allclose(out, x, atol=0)

    def test_zero_weights_broadcast_bias(self):
        b = np.array([1.0, 2.0])
        out, _ = inner_product_forward(np.ones((3, 4)), np.zeros((4, 2)), b)
        npt.assert_array_equal(out, np.tile(b, (3, 1)))

    def test_applies_per_frame_on_sequences(self, rng):
        x = rng.normal(size=(2, 5, 3))
        w = rng.normal(size=(3, 4))
        b = rng.normal(size=4)
        out, _ = inner_product_forward(x, w, b)
        npt.assert_allclose(out[1, 2], x[1, 2] @ w + b, rtol=1e-15)

    def test_gradients_match_finite_differences(self, rng):
        x = rng.normal(size=(2, 5, 3))
        w = rng.normal(size=(3, 4))
        b = rng.normal(size=4)
        out, cache = inner_product_forward(x, w, b)
        r = rng.normal(size=out.shape)
        dx, dw, db = inner_product_backward(r, cache)
        fd_x = central_difference(lambda v: float((inner_product_forward(v, w, b)[0] * r).sum()), x.copy())
        fd_w = central_difference(lambda v: float((inner_product_forward(x, v, b)[0] * r).sum()), w.copy())
        fd_b = central_difference(lambda v: float((inner_product_forward(x, w, v)[0] * r).sum()), b.copy())
        assert rel_error(dx, fd_x) <= FD_TOL
        assert rel_error(dw, fd_w) <= FD_TOL
        assert rel_error(db, fd_b) <= FD_TOL

    def test_feature_mismatch(self):
        with pytest.raises(ShapeError):
            inner_product_forward(np.zeros((2, 3)), np.zeros((4, 2)), np.zeros(2))


class TestLstm:
    def test_zero_parameters_give_zero_output(self):
        x = np.ones((2, 4, 3))
        h, _ = lstm_forward(x, np.zeros((3, 8)), np.zeros((2, 8)), np.zeros(8))
        npt.assert_array_equal(h, np.zeros((2, 4, 2)))

    def test_single_step_closed_form(self):
        # D = H = 1, unit weights, zero bias, one frame: every gate sees x0,
        # so h = sig(x0) * tanh(sig(x0) * tanh(x0))
        x0 = 0.5
        x = np.array([[[x0]]])
        h, _ = lstm_forward(x, np.ones((1, 4)), np.ones((1, 4)), np.zeros(4))
        sig = 1.0 / (1.0 + math.exp(-x0))
        expect = sig * math.tanh(sig * math.tanh(x0))
        assert h[0, 0, 0] == pytest.approx(expect, rel=1e-15)

    def test_forget_bias_init(self):
        b = lstm_bias_init(3)
        npt.assert_array_equal(b, [0, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0, 0])

    def test_gradients_match_finite_differences(self, rng):
        n, t, d, hidden = 2, 5, 3, 4
        x = rng.normal(size=(n, t, d))
        wx = rng.normal(size=(d, 4 * hidden)) * 0.5
        wh = rng.normal(size=(hidden, 4 * hidden)) * 0.5
        b = rng.normal(size=4 * hidden) * 0.5
        h, cache = lstm_forward(x, wx, wh, b)
        r = rng.normal(size=h.shape)
        dx, dwx, dwh, db = lstm_backward(r, cache)
        fd_x = central_difference(lambda v: float((lstm_forward(v, wx, wh, b)[0] * r).sum()), x.copy())
        fd_wx = central_difference(lambda v: float((lstm_forward(x, v, wh, b)[0] * r).sum()), wx.copy())
        fd_wh = central_difference(lambda v: float((lstm_forward(x, wx, v, b)[0] * r).sum()), wh.copy())
        fd_b = central_difference(lambda v: float((lstm_forward(x, wx, wh, v)[0] * r).sum()), b.copy())
        assert rel_error(dx, fd_x) <= FD_TOL
        assert rel_error(dwx, fd_wx) <= FD_TOL
        assert rel_error(dwh, fd_wh) <= FD_TOL
        assert rel_error(db, fd_b) <= FD_TOL

    def test_rejects_flat_input(self):
        with pytest.raises(ShapeError):
            lstm_forward(np.zeros((4, 3)), np.zeros((3, 8)), np.zeros((2, 8)), np.zeros(8))

    def test_non_finite_raises(self):
        x = np.full((1, 2, 1), np.nan)
        with pytest.raises(NumericError):
            lstm_forward(x, np.ones((1, 4)), np.ones((1, 4)), np.zeros(4))


class TestReverse:
    def test_reverses_time(self):
        x = np.arange(6.0).reshape(1, 3, 2)
        out, _ = reverse_forward(x)
        npt.assert_array_equal(out[0], x[0, ::-1])

    def test_involution(self, rng):
        x = rng.normal(size=(2, 5, 3))
        once, _ = reverse_forward(x)
        twice, _ = reverse_forward(once)
        npt.assert_array_equal(twice, x)

    def test_single_frame_is_identity(self, rng):
        x = rng.normal(size=(2, 1, 3))
        out, _ = reverse_forward(x)
        npt.assert_array_equal(out, x)

    def test_backward_reverses_gradient(self, rng):
        _, cache = reverse_forward(np.zeros((1, 4, 2)))
        dout = rng.normal(size=(1, 4, 2))
        npt.assert_array_equal(reverse_backward(dout, cache)[0], dout[0, ::-1])


class TestPermute:
    def test_single_channel_row_is_transpose(self):
        x = np.arange(3.0).reshape(1, 1, 1, 3)
        out, _ = permute_forward(x)
        npt.assert_array_equal(out, np.array([[[0.0], [1.0], [2.0]]]))

    def test_explicit_index_mapping(self):
        c, h, w = 2, 2, 3
        x = np.arange(c * h * w, dtype=float).reshape(1, c, h, w)
        out, _ = permute_forward(x)
        # out[t, c*H + h] = x[c, h, t], checked elementwise
        for t in range(w):
            for ci in range(c):
                for hi in range(h):
                    assert out[0, t, ci * h + hi] == x[0, ci, hi, t]

    def test_round_trip_is_identity(self, rng):
        x = rng.normal(size=(2, 3, 4, 5))
        out, cache = permute_forward(x)
        npt.assert_array_equal(permute_backward(out, cache), x)

    def test_linearity(self, rng):
        x = rng.normal(size=(1, 2, 3, 4))
        y = rng.normal(size=(1, 2, 3, 4))
        lhs, _ = permute_forward(2.0 * x + 3.0 * y)
        rhs = 2.0 * permute_forward(x)[0] + 3.0 * permute_forward(y)[0]
        npt.assert_allclose(lhs, rhs, atol=0)


class TestSoftmax:
    def test_equal_logits_are_uniform(self):
        out = softmax_per_frame(np.zeros((3, 4)))
        npt.assert_allclose(out, 0.25, atol=1e-15)

    def test_closed_form_row(self):
        out = softmax_per_frame(np.log(np.array([[1.0, 2.0, 3.0]])))
        npt.assert_allclose(out, [[1 / 6, 2 / 6, 3 / 6]], atol=1e-15)

    def test_shift_invariance(self, rng):
        x = rng.normal(size=(4, 5))
        npt.assert_allclose(softmax_per_frame(x), softmax_per_frame(x + 100.0), atol=1e-12)

    def test_rows_sum_to_one(self, rng):
        out = softmax_per_frame(rng.normal(size=(6, 11)) * 50)
        npt.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)

    def test_rejects_non_finite(self):
        with pytest.raises(NumericError):
            softmax_per_frame(np.array([[0.0, np.inf]]))


class TestNumericHelpers:
    def test_sigmoid_extremes_do_not_overflow(self):
        # exp(-1000) underflowing to 0 is the intended behavior; only
        # overflow and invalid ops would indicate the naive formula
        with np.errstate(over="raise", invalid="raise"):
            out = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
        npt.assert_allclose(out, [0.0, 0.5, 1.0], atol=1e-12)

    def test_uniform_fan_in_bounds(self, rng):
        fan_in = 48
        w = uniform_fan_in(rng, (1000,), fan_in)
        bound = math.sqrt(3.0 / fan_in)
        assert np.abs(w).max() <= bound
        assert abs(w.mean()) < bound / 10
