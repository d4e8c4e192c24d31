"""Fused network primitives with hand-written backward passes.

All sequence ops take ``[..., L, C]`` inputs: time on axis -2, channels on
axis -1, any number of leading batch axes.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, _make, mul

LAYER_NORM_EPS = 1e-5


def softmax_last_axis(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def _bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (x,), _bw, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, epsilon: float = LAYER_NORM_EPS) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm affine params must have shape ({d},)")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    centered = xd - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + epsilon)
    xhat = centered * inv_std
    gd = gamma.data
    lead = tuple(range(x.ndim - 1))

    def _bw(g):
        dxhat = g * gd
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(xhat * gd + beta.data, (x, gamma, beta), _bw, "layer_norm")


def conv1d_circular(x: Tensor, kernels: Tensor) -> Tensor:
    """Width-3, stride-1 cross-correlation with one step of circular padding.

    ``x`` is ``[..., L, c_in]`` and ``kernels`` is ``[c_out, c_in, 3]``; the
    output is ``[..., L, c_out]``.
    """
    if x.ndim < 2:
        raise ShapeError(f"conv1d_circular needs [..., L, c_in], got {x.shape}")
    L, c_in = x.shape[-2], x.shape[-1]
    if L < 1:
        raise ShapeError("sequence length must be >= 1")
    if kernels.ndim != 3 or kernels.shape[1] != c_in or kernels.shape[2] != 3:
        raise ShapeError(f"kernels must be [c_out, {c_in}, 3], got {kernels.shape}")
    c_out = kernels.shape[0]
    xd = x.data
    padded = np.concatenate([xd[..., -1:, :], xd, xd[..., :1, :]], axis=-2)
    # taps[..., t, c, k] = padded[..., t + k, c]
    taps = np.stack([padded[..., k : k + L, :] for k in range(3)], axis=-1)
    lead = taps.shape[:-3]
    taps_flat = taps.reshape(-1, c_in * 3)
    w_flat = kernels.data.reshape(c_out, c_in * 3)
    out = (taps_flat @ w_flat.T).reshape(lead + (L, c_out))

    def _bw(g):
        g_flat = g.reshape(-1, c_out)
        dw = (g_flat.T @ taps_flat).reshape(kernels.shape)
        dtaps = (g_flat @ w_flat).reshape(lead + (L, c_in, 3))
        dpad = np.zeros(padded.shape, dtype=xd.dtype)
        for k in range(3):
            dpad[..., k : k + L, :] += dtaps[..., k]
        dx = dpad[..., 1 : L + 1, :].copy()
        dx[..., L - 1, :] += dpad[..., 0, :]
        dx[..., 0, :] += dpad[..., L + 1, :]
        return dx, dw

    return _make(out, (x, kernels), _bw, "conv1d_circular")


def max_pool1d(x: Tensor) -> Tensor:
    """Max over time with kernel 3, stride 2, padding 1 (-inf); length ceil(L/2)."""
    if x.ndim < 2:
        raise ShapeError(f"max_pool1d needs [..., L, C], got {x.shape}")
    L = x.shape[-2]
    out_len = (L + 1) // 2
    xd = x.data
    pad = np.full(xd.shape[:-2] + (1,) + xd.shape[-1:], -np.inf, dtype=xd.dtype)
    padded = np.concatenate([pad, xd, pad], axis=-2)
    stop = 2 * (out_len - 1) + 1
    windows = np.stack([padded[..., k : k + stop : 2, :] for k in range(3)], axis=-1)
    # argmax takes the first maximum, so ties go to the earliest time step
    which = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, which[..., None], axis=-1)[..., 0]

    def _bw(g):
        dpad = np.zeros(padded.shape, dtype=xd.dtype)
        for k in range(3):
            dpad[..., k : k + stop : 2, :] += np.where(which == k, g, 0.0)
        return (dpad[..., 1 : L + 1, :].copy(),)

    return _make(out, (x,), _bw, "max_pool1d")


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; identity unless ``train`` and ``p > 0``."""
    if not train or p <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return mul(x, Tensor(keep, dtype=x.data.dtype))
