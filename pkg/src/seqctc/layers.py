"""Trainable layer primitives with explicit forward/backward passes.

Every op follows the same shape discipline: a leading batch axis N,
`forward(...) -> (out, cache)`, `backward(dout, cache) -> gradients`.
Caches are per-call values, so concurrent evaluations never share state.
All math is float64; speed is bought with batched BLAS calls, not
precision.

Convolution layout is NCHW; sequences are N x T x D with time second.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericError, ShapeError

# when enabled, forward ops assert finite outputs (slow; used in tests)
CHECK_FINITE = False


def _finite(name, arr):
    if CHECK_FINITE and not np.isfinite(arr).all():
        raise NumericError(f"{name} produced non-finite values")
    return arr


def sigmoid(x):
    """Logistic function evaluated via exp(-|x|) so neither tail overflows."""
    e = np.exp(-np.abs(x))
    pos = x >= 0
    out = np.where(pos, 1.0 / (1.0 + e), e / (1.0 + e))
    return out


def uniform_fan_in(rng, shape, fan_in):
    """Zero-mean uniform init with variance 1/fan_in: U(+-sqrt(3/fan_in))."""
    bound = float(np.sqrt(3.0 / fan_in))
    return rng.uniform(-bound, bound, size=shape)


def lstm_bias_init(hidden):
    """Zero bias except the forget gate, which starts at 1 so early cell
    state survives long sequences."""
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = 1.0
    return b


def _conv_out_size(size, k, stride, pad):
    span = size + 2 * pad - k
    if span < 0:
        raise ShapeError(f"kernel {k} does not fit input {size} with padding {pad}")
    return span // stride + 1


def _window_cols(x, kh, kw, stride, pad):
    # im2col: (N, Ho, Wo, C*kh*kw) view-then-copy
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho, wo, c * kh * kw)


def conv2d_forward(x, w, b, stride=1, pad=0):
    """Cross-correlation of NCHW input with FCkk kernels.
    Output spatial size is floor((in + 2p - k)/s) + 1."""
    if x.ndim != 4:
        raise ShapeError(f"conv input must be NCHW, got shape {x.shape}")
    if w.ndim != 4 or w.shape[1] != x.shape[1]:
        raise ShapeError(f"kernel {w.shape} does not match input channels {x.shape}")
    n, c, h, width = x.shape
    f, _, kh, kw = w.shape
    ho = _conv_out_size(h, kh, stride, pad)
    wo = _conv_out_size(width, kw, stride, pad)
    cols = _window_cols(x, kh, kw, stride, pad)
    out = cols @ w.reshape(f, -1).T + b
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    assert out.shape == (n, f, ho, wo)
    cache = (x, w, stride, pad)
    return _finite("conv2d", out), cache


def conv2d_backward(dout, cache):
    """Returns (dx, dw, db). Columns are recomputed instead of cached to
    keep forward memory proportional to activations, not windows."""
    x, w, stride, pad = cache
    n, c, h, width = x.shape
    f, _, kh, kw = w.shape
    _, _, ho, wo = dout.shape
    cols = _window_cols(x, kh, kw, stride, pad)
    dd = dout.transpose(0, 2, 3, 1).reshape(-1, f)
    dw = (dd.T @ cols.reshape(-1, c * kh * kw)).reshape(w.shape)
    db = dd.sum(axis=0)
    dcols = (dd @ w.reshape(f, -1)).reshape(n, ho, wo, c, kh, kw)
    hp, wp = h + 2 * pad, width + 2 * pad
    dxp = np.zeros((n, c, hp, wp))
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    dx = dxp[:, :, pad : pad + h, pad : pad + width] if pad else dxp
    return dx, dw, db


def maxpool2d_forward(x, k, stride):
    """Per-window max over k x k windows; ties resolve to the first
    position in row-major scan order."""
    if x.ndim != 4:
        raise ShapeError(f"pool input must be NCHW, got shape {x.shape}")
    n, c, h, w = x.shape
    ho = _conv_out_size(h, k, stride, 0)
    wo = _conv_out_size(w, k, stride, 0)
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = win.reshape(n, c, ho, wo, k * k)
    arg = flat.argmax(axis=4)
    out = np.take_along_axis(flat, arg[..., None], axis=4)[..., 0]
    cache = (x.shape, k, stride, arg)
    return _finite("maxpool2d", np.ascontiguousarray(out)), cache


def maxpool2d_backward(dout, cache):
    shape, k, stride, arg = cache
    ho, wo = arg.shape[2], arg.shape[3]
    dx = np.zeros(shape)
    for i in range(k):
        for j in range(k):
            contrib = dout * (arg == i * k + j)
            dx[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += contrib
    return dx


def relu_forward(x):
    out = np.maximum(x, 0.0)
    return out, (x > 0.0)


def relu_backward(dout, cache):
    return dout * cache


def eltwise_sum_forward(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"eltwise sum needs equal shapes, got {a.shape} and {b.shape}")
    return a + b, None


def eltwise_sum_backward(dout, cache):
    # the shortcut's defining property: both branches see the gradient as-is
    return dout, dout


def inner_product_forward(x, w, b):
    """Affine map on the last axis; leading axes (batch, time) broadcast."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"inner product: input features {x.shape[-1]} != weight rows {w.shape[0]}")
    out = x @ w + b
    return _finite("inner_product", out), (x, w)


def inner_product_backward(dout, cache):
    x, w = cache
    d = w.shape[0]
    u = w.shape[1]
    dx = dout @ w.T
    dw = x.reshape(-1, d).T @ dout.reshape(-1, u)
    db = dout.reshape(-1, u).sum(axis=0)
    return dx, dw, db


def lstm_forward(x, wx, wh, b):
    """Sequence LSTM from zero initial state.

    Gate layout inside the 4H axis is [input, forget, candidate, output];
    c_t = f*c + i*g, h_t = o*tanh(c_t). Input is N x T x D, output N x T x H.
    """
    if x.ndim != 3:
        raise ShapeError(f"lstm input must be N x T x D, got shape {x.shape}")
    n, t_len, d = x.shape
    if wx.shape[0] != d or wx.shape[1] != wh.shape[1] or wx.shape[1] % 4:
        raise ShapeError(f"lstm weights {wx.shape}/{wh.shape} do not match input {x.shape}")
    hidden = wx.shape[1] // 4
    pre = x @ wx + b
    h = np.zeros((n, hidden))
    c = np.zeros((n, hidden))
    hs = np.zeros((n, t_len, hidden))
    steps = []
    for t in range(t_len):
        gates = pre[:, t] + h @ wh
        i = sigmoid(gates[:, :hidden])
        f = sigmoid(gates[:, hidden : 2 * hidden])
        g = np.tanh(gates[:, 2 * hidden : 3 * hidden])
        o = sigmoid(gates[:, 3 * hidden :])
        c_next = f * c + i * g
        tc = np.tanh(c_next)
        h_next = o * tc
        steps.append((h, c, i, f, g, o, tc))
        h, c = h_next, c_next
        hs[:, t] = h
    if not np.isfinite(hs).all():
        raise NumericError("lstm produced non-finite activations")
    return hs, (x, wx, wh, steps)


def lstm_backward(dout, cache):
    """Full backpropagation through time. Returns (dx, dwx, dwh, db)."""
    x, wx, wh, steps = cache
    n, t_len, d = x.shape
    hidden = wh.shape[0]
    dx = np.zeros_like(x)
    dwx = np.zeros_like(wx)
    dwh = np.zeros_like(wh)
    db = np.zeros(4 * hidden)
    dh_next = np.zeros((n, hidden))
    dc_next = np.zeros((n, hidden))
    for t in range(t_len - 1, -1, -1):
        h_prev, c_prev, i, f, g, o, tc = steps[t]
        dh = dout[:, t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dgates = np.concatenate(
            [
                dc * g * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                dc * i * (1.0 - g * g),
                do * o * (1.0 - o),
            ],
            axis=1,
        )
        dc_next = dc * f
        dh_next = dgates @ wh.T
        dx[:, t] = dgates @ wx.T
        dwx += x[:, t].T @ dgates
        dwh += h_prev.T @ dgates
        db += dgates.sum(axis=0)
    return dx, dwx, dwh, db


def reverse_forward(x):
    """Time reversal of an N x T x D sequence: output t = input T-1-t."""
    if x.ndim != 3:
        raise ShapeError(f"reverse input must be N x T x D, got shape {x.shape}")
    return np.ascontiguousarray(x[:, ::-1]), None


def reverse_backward(dout, cache):
    return np.ascontiguousarray(dout[:, ::-1])


def permute_forward(x):
    """Bridge NCHW feature maps to N x W x (C*H) sequences: width becomes
    time, each column's channels-major (then height) values become the
    per-frame feature vector."""
    if x.ndim != 4:
        raise ShapeError(f"permute input must be NCHW, got shape {x.shape}")
    n, c, h, w = x.shape
    out = np.ascontiguousarray(x.transpose(0, 3, 1, 2)).reshape(n, w, c * h)
    return out, (c, h)


def permute_backward(dout, cache):
    c, h = cache
    n, w, _ = dout.shape
    return np.ascontiguousarray(dout.reshape(n, w, c, h).transpose(0, 2, 3, 1))


def softmax_per_frame(logits):
    """Row-wise softmax over the last axis with max shift."""
    if not np.isfinite(logits).all():
        raise NumericError("softmax input contains non-finite values")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)
