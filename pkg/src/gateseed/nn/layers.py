"""Forward/backward kernels for the layer types used by the backbone.

Activations are NHWC. Every ``*_forward`` returns ``(out, cache)`` and the
matching ``*_backward`` consumes ``(dout, cache)``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_forward(x, w, b):
    """3x3 (any odd k) same-padding convolution, stride 1.

    x: (N, H, W, C); w: (O, C, k, k); b: (O,)
    """
    n, h, wd, c = x.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise ValueError(f"conv expects {ci} input channels, got {c}")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    cols = sliding_window_view(xp, (kh, kw), axis=(1, 2)).reshape(n * h * wd, c * kh * kw)
    wmat = w.reshape(o, -1)
    out = cols @ wmat.T
    out += b
    return out.reshape(n, h, wd, o), (x.shape, cols, w)


def conv2d_backward(dout, cache, need_dx: bool = True):
    """Returns ``(dx, dw, db)``; ``dx`` is None when ``need_dx`` is false."""
    xshape, cols, w = cache
    n, h, wd, c = xshape
    o, _, kh, kw = w.shape
    d2 = dout.reshape(-1, o)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (d2 @ w.reshape(o, -1)).reshape(n, h, wd, c, kh, kw)
    ph, pw = kh // 2, kw // 2
    dxp = np.zeros((n, h + 2 * ph, wd + 2 * pw, c), dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i : i + h, j : j + wd, :] += dcols[..., i, j]
    return dxp[:, ph : ph + h, pw : pw + wd, :], dw, db


def _channel_sum(x):
    """Sum over all but the last axis, via BLAS on a 2-D view."""
    x2 = x.reshape(-1, x.shape[-1])
    return np.ones(x2.shape[0], dtype=x.dtype) @ x2


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train: bool, eps: float = 1e-5):
    """Per-channel normalisation over (N, H, W)."""
    if train:
        m = x.size // x.shape[-1]
        mean = _channel_sum(x) / m
        centered = x - mean
        var = _channel_sum(centered * centered) / m
    else:
        mean, var = running_mean, running_var
        centered = x - mean
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = centered * inv_std
    out = gamma * xhat + beta
    return out, (xhat, inv_std, gamma, mean, var)


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma, _, _ = cache
    m = dout.size // dout.shape[-1]
    dgamma = _channel_sum(dout * xhat)
    dbeta = _channel_sum(dout)
    dxhat = dout * gamma
    dx = (inv_std / m) * (m * dxhat - _channel_sum(dxhat) - xhat * _channel_sum(dxhat * xhat))
    return dx, dgamma, dbeta


def relu_forward(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dout, mask):
    return dout * mask


def maxpool2_forward(x):
    """2x2 stride-2 max pool; odd trailing rows/cols are dropped."""
    n, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    quads = [x[:, dy : 2 * ho : 2, dx : 2 * wo : 2, :] for dy in (0, 1) for dx in (0, 1)]
    out = np.maximum(np.maximum(quads[0], quads[1]), np.maximum(quads[2], quads[3]))
    # route the gradient to the first maximal element of each window
    taken = np.zeros(out.shape, dtype=bool)
    masks = []
    for q in quads:
        hit = (q == out) & ~taken
        taken |= hit
        masks.append(hit)
    return out, (x.shape, masks)


def maxpool2_backward(dout, cache):
    xshape, masks = cache
    dx = np.zeros(xshape, dtype=dout.dtype)
    n, h, w, c = xshape
    ho, wo = h // 2, w // 2
    k = 0
    for dy in (0, 1):
        for dx_ in (0, 1):
            dx[:, dy : 2 * ho : 2, dx_ : 2 * wo : 2, :] = dout * masks[k]
            k += 1
    return dx


def dense_forward(x, w, b):
    """x: (N, in); w: (out, in); b: (out,)"""
    return x @ w.T + b, (x, w)


def dense_backward(dout, cache):
    x, w = cache
    return dout @ w, dout.T @ x, dout.sum(axis=0)


def _sigmoid(z):
    # split form avoids overflow warnings for large |z|
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def heads_forward(z):
    """Grid heads on (..., F=5): logistic on x, y, c; identity on d; tanh on theta."""
    out = z.copy()
    for k in (0, 1, 4):
        out[..., k] = _sigmoid(z[..., k])
    out[..., 3] = np.tanh(z[..., 3])
    return out, out


def heads_backward(dout, act):
    dz = dout.copy()
    for k in (0, 1, 4):
        dz[..., k] = dout[..., k] * act[..., k] * (1.0 - act[..., k])
    dz[..., 3] = dout[..., 3] * (1.0 - act[..., 3] ** 2)
    return dz
