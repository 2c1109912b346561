"""Differentiable numpy layer primitives.

Each operation comes as a ``*_forward`` returning ``(output, cache)`` and
a ``*_backward`` consuming the upstream gradient plus the cache. Layers
hold no state; parameters are passed in and gradients are returned, so
the same parameter arrays can be shared between several forward passes
(the two-modality backbone) with gradients summed by the caller.

Activations are channel-first float arrays, shape (N, C, H, W).
"""

from __future__ import annotations

import numpy as np


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=np.float64) -> np.ndarray:
    """Fan-in-scaled uniform init, U(-sqrt(6/fan_in), +sqrt(6/fan_in))."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv_out_size(size: int, kernel: int, stride: int, pad: int, dilation: int = 1) -> int:
    eff = dilation * (kernel - 1) + 1
    return (size + 2 * pad - eff) // stride + 1


def same_pad(kernel: int, dilation: int = 1) -> int:
    """Padding that keeps H_out == ceil(H/stride) for odd kernels."""
    return (dilation * (kernel - 1)) // 2


def _window_indices(h, w, kh, kw, stride, dilation):
    out_h = conv_out_size(h, kh, stride, 0, dilation)
    out_w = conv_out_size(w, kw, stride, 0, dilation)
    i0 = np.repeat(np.arange(kh) * dilation, kw)
    j0 = np.tile(np.arange(kw) * dilation, kh)
    i1 = stride * np.repeat(np.arange(out_h), out_w)
    j1 = stride * np.tile(np.arange(out_w), out_h)
    rows = i0[:, None] + i1[None, :]  # (kh*kw, L)
    cols = j0[:, None] + j1[None, :]
    return rows, cols, out_h, out_w


def conv2d_forward(x, w, b, stride=1, pad=0, dilation=1):
    """2-D convolution. x (N,Cin,H,W), w (Cout,Cin,kh,kw), b (Cout,)."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    if pad:
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    else:
        xp = x
    rows, cols, out_h, out_w = _window_indices(xp.shape[2], xp.shape[3], kh, kw, stride, dilation)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"conv output would be empty for input {h}x{wd}")
    patches = xp[:, :, rows, cols].reshape(n, cin * kh * kw, -1)  # (N, Cin*k*k, L)
    y = np.matmul(w.reshape(cout, -1), patches)  # (N, Cout, L)
    y = y.reshape(n, cout, out_h, out_w) + b[None, :, None, None]
    cache = (patches, x.shape, w.shape, stride, pad, dilation, rows, cols, xp.shape)
    return y, cache


def conv2d_backward(dy, cache, w, need_dx=True):
    """Gradients of conv2d. Returns (dx, dw, db); dx is None if not needed."""
    patches, x_shape, w_shape, stride, pad, dilation, rows, cols, xp_shape = cache
    n, cin, h, wd = x_shape
    cout, _, kh, kw = w_shape
    dyr = dy.reshape(n, cout, -1)  # (N, Cout, L)
    dw = np.tensordot(dyr, patches, axes=([0, 2], [0, 2])).reshape(w_shape)
    db = dyr.sum(axis=(0, 2))
    dx = None
    if need_dx:
        dpatches = np.matmul(w.reshape(cout, -1).T, dyr)  # (N, Cin*k*k, L)
        dpatches = dpatches.reshape(n * cin, kh * kw, -1)
        dxp = np.zeros((n * cin, xp_shape[2] * xp_shape[3]), dtype=dy.dtype)
        flat = (rows * xp_shape[3] + cols).ravel()  # (k*k*L,)
        np.add.at(
            dxp,
            (np.arange(n * cin)[:, None], flat[None, :]),
            dpatches.reshape(n * cin, -1),
        )
        dxp = dxp.reshape(n, cin, xp_shape[2], xp_shape[3])
        dx = dxp[:, :, pad:pad + h, pad:pad + wd] if pad else dxp
    return dx, dw, db


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------

def maxpool2d_forward(x, kernel, stride):
    """Max pooling with square kernel. Ties route to the first maximum."""
    n, c, h, w = x.shape
    rows, cols, out_h, out_w = _window_indices(h, w, kernel, kernel, stride, 1)
    win = x[:, :, rows, cols]  # (N, C, k*k, L)
    arg = win.argmax(axis=2)  # (N, C, L)
    y = np.take_along_axis(win, arg[:, :, None, :], axis=2)[:, :, 0, :]
    y = y.reshape(n, c, out_h, out_w)
    cache = (x.shape, rows, cols, arg)
    return y, cache


def maxpool2d_backward(dy, cache):
    x_shape, rows, cols, arg = cache
    n, c, h, w = x_shape
    dyf = dy.reshape(n * c, -1)  # (NC, L)
    flat = rows * w + cols  # (k*k, L)
    idx = flat[arg.reshape(n * c, -1), np.arange(flat.shape[1])[None, :]]  # (NC, L)
    dx = np.zeros((n * c, h * w), dtype=dy.dtype)
    np.add.at(dx, (np.arange(n * c)[:, None], idx), dyf)
    return dx.reshape(x_shape)


def blockmax_forward(x, ratio):
    """Non-overlapping max pooling with kernel == stride == ratio."""
    n, c, h, w = x.shape
    if h % ratio or w % ratio:
        raise ValueError(f"spatial size {h}x{w} not divisible by ratio {ratio}")
    if ratio == 1:
        return x, (x.shape, ratio, None)
    xr = x.reshape(n, c, h // ratio, ratio, w // ratio, ratio)
    xr = xr.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // ratio, w // ratio, ratio * ratio)
    arg = xr.argmax(axis=-1)
    y = np.take_along_axis(xr, arg[..., None], axis=-1)[..., 0]
    return y, (x.shape, ratio, arg)


def blockmax_backward(dy, cache):
    x_shape, ratio, arg = cache
    if ratio == 1:
        return dy
    n, c, h, w = x_shape
    dxr = np.zeros((n, c, h // ratio, w // ratio, ratio * ratio), dtype=dy.dtype)
    np.put_along_axis(dxr, arg[..., None], dy[..., None], axis=-1)
    dxr = dxr.reshape(n, c, h // ratio, w // ratio, ratio, ratio)
    return dxr.transpose(0, 1, 2, 4, 3, 5).reshape(x_shape)


# ---------------------------------------------------------------------------
# activations and normalization
# ---------------------------------------------------------------------------

def relu_forward(x):
    y = np.maximum(x, 0.0)
    return y, (x > 0)


def relu_backward(dy, cache):
    return dy * cache


def _channel_window_sum(x, n_window):
    """Sum over a centered window of +-(n_window-1)//2 along axis 1."""
    half = (n_window - 1) // 2
    c = x.shape[1]
    cs = np.cumsum(x, axis=1)
    zeros = np.zeros_like(cs[:, :1])
    cs = np.concatenate([zeros, cs], axis=1)  # (N, C+1, ...)
    hi = np.minimum(np.arange(c) + half + 1, c)
    lo = np.maximum(np.arange(c) - half, 0)
    return cs[:, hi] - cs[:, lo]


def lrn_forward(x, n=5, k=2.0, alpha=1e-4, beta=0.75):
    """Cross-channel local response normalization.

    Classical (AlexNet) form: y_c = x_c / (k + alpha * sum_{c' in N(c)} x_{c'}^2)^beta
    with N(c) a centered window of size n. alpha is used as-is, not
    divided by n.
    """
    ssum = _channel_window_sum(x * x, n)
    denom = k + alpha * ssum
    scale = denom ** (-beta)
    y = x * scale
    return y, (x, denom, scale, n, alpha, beta)


def lrn_backward(dy, cache):
    x, denom, scale, n, alpha, beta = cache
    # dL/dx_j = dy_j * scale_j - 2*alpha*beta*x_j * sum_{c in N(j)} dy_c x_c denom_c^(-beta-1)
    inner = dy * x * denom ** (-beta - 1.0)
    return dy * scale - 2.0 * alpha * beta * x * _channel_window_sum(inner, n)


# ---------------------------------------------------------------------------
# dense layers
# ---------------------------------------------------------------------------

def linear_forward(x, w, b):
    """x (N, Din), w (Dout, Din), b (Dout,) -> (N, Dout)."""
    y = x @ w.T
    if b is not None:
        y = y + b
    return y, x


def linear_backward(dy, cache, w, need_dx=True):
    x = cache
    dw = dy.T @ x
    db = dy.sum(axis=0)
    dx = dy @ w if need_dx else None
    return dx, dw, db


def dropout_forward(x, rate, train, rng=None):
    """Inverted dropout; identity when train is False or rate == 0."""
    if not train or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dy, cache):
    if cache is None:
        return dy
    return dy * cache


# ---------------------------------------------------------------------------
# softmax helpers
# ---------------------------------------------------------------------------

def softmax(z, axis=-1):
    """Shift-invariant softmax."""
    zs = z - z.max(axis=axis, keepdims=True)
    e = np.exp(zs)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z, axis=-1):
    zs = z - z.max(axis=axis, keepdims=True)
    return zs - np.log(np.exp(zs).sum(axis=axis, keepdims=True))
