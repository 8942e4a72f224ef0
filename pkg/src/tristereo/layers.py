"""3x3x3 convolutions and per-channel normalization on [N, C, D, H, W] volumes.

Convolutions are cross-correlations with zero padding 1 and stride 1, so
shapes are preserved.  The im2col layout is ``[N, C, 27, D, H, W]`` with
taps ordered (disparity, row, column) lexicographically.
"""

from __future__ import annotations

import itertools

import numpy as np

from .autograd import Var, as_var, record

TAPS = list(itertools.product(range(3), repeat=3))
EPS = 1e-5


def im2col(x: np.ndarray) -> np.ndarray:
    n, c, d, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
    cols = np.empty((n, c, 27, d, h, w), dtype=x.dtype)
    for t, (i, j, k) in enumerate(TAPS):
        cols[:, :, t] = xp[:, :, i:i + d, j:j + h, k:k + w]
    return cols


def col2im(cols: np.ndarray) -> np.ndarray:
    n, c, _, d, h, w = cols.shape
    xp = np.zeros((n, c, d + 2, h + 2, w + 2), dtype=cols.dtype)
    for t, (i, j, k) in enumerate(TAPS):
        xp[:, :, i:i + d, j:j + h, k:k + w] += cols[:, :, t]
    return xp[:, :, 1:-1, 1:-1, 1:-1]


def conv3d(x, weight, bias=None) -> Var:
    """Dense conv: x [N, Cin, D, H, W], weight [Cout, Cin, 3, 3, 3], bias [Cout]."""
    x, weight = as_var(x), as_var(weight)
    n, cin, d, h, w = x.shape
    cout = weight.shape[0]
    if weight.shape[1] != cin:
        raise ValueError(f"conv3d expects {weight.shape[1]} input channels, got {cin}")
    cols = im2col(x.value).reshape(n, cin * 27, d * h * w)
    w2 = weight.value.reshape(cout, cin * 27)
    out = np.matmul(w2, cols).reshape(n, cout, d, h, w)
    parents = [x, weight]
    if bias is not None:
        bias = as_var(bias)
        out = out + bias.value[None, :, None, None, None]
        parents.append(bias)

    def vjp(g):
        g2 = g.reshape(n, cout, d * h * w)
        gx = col2im(np.matmul(w2.T, g2).reshape(n, cin, 27, d, h, w)) if x.requires_grad else None
        gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3, 4)))
        return grads

    return record(out, parents, vjp, "conv3d")


def depthwise_conv3d(x, weight) -> Var:
    """One 3x3x3 kernel per channel: x [N, C, D, H, W], weight [C, 3, 3, 3]."""
    x, weight = as_var(x), as_var(weight)
    n, c, d, h, w = x.shape
    if weight.shape[0] != c:
        raise ValueError(f"depthwise kernel has {weight.shape[0]} channels, input has {c}")
    cols = im2col(x.value).reshape(n, c, 27, d * h * w)
    w2 = weight.value.reshape(c, 27)
    out = np.einsum("ct,nctv->ncv", w2, cols).reshape(x.shape)

    def vjp(g):
        g2 = g.reshape(n, c, d * h * w)
        gw = np.einsum("ncv,nctv->ct", g2, cols).reshape(weight.shape)
        gx = None
        if x.requires_grad:
            gx = col2im((w2[None, :, :, None] * g2[:, :, None, :]).reshape(n, c, 27, d, h, w))
        return gx, gw

    return record(out, (x, weight), vjp, "depthwise_conv3d")


def batch_norm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, stats: list | None = None) -> Var:
    """Per-channel normalization of [N, C, D, H, W].

    In training mode the statistics come from the batch over (N, D, H, W); a
    (running_mean, running_var, mean, unbiased variance) tuple is appended to
    ``stats`` so the caller can update the running buffers in place.  Otherwise ``running_mean``/``running_var`` are used.
    """
    x, gamma, beta = as_var(x), as_var(gamma), as_var(beta)
    axes = (0, 2, 3, 4)
    bc = (None, slice(None), None, None, None)
    m = x.value.size // x.shape[1]
    if training:
        mu = x.value.mean(axis=axes)
        var = x.value.var(axis=axes)
        if stats is not None:
            stats.append((running_mean, running_var, mu, var * m / max(m - 1, 1)))
    else:
        mu = np.asarray(running_mean, dtype=x.dtype)
        var = np.asarray(running_var, dtype=x.dtype)
    inv_std = 1.0 / np.sqrt(var + EPS)
    xhat = (x.value - mu[bc]) * inv_std[bc]
    out = gamma.value[bc] * xhat + beta.value[bc]

    def vjp(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        dxhat = g * gamma.value[bc]
        if training:
            gx = (inv_std[bc] / m) * (m * dxhat - dxhat.sum(axis=axes)[bc]
                                      - xhat * (dxhat * xhat).sum(axis=axes)[bc])
        else:
            gx = dxhat * inv_std[bc]
        return gx, gg, gb

    return record(out, (x, gamma, beta), vjp, "batch_norm")
