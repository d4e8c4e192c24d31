"""Scaled dot-product attention: dense and ProbSparse variants.

Inputs are per-head tensors ``[..., L, d_head]`` (leading axes typically
batch and head).  Both variants return an :class:`AttentionOutput`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError
from ..functional import softmax_last_axis
from ..tensor import Tensor, expand, matmul, mean, put_rows, scale, swap_last, take_rows


@dataclass
class AttentionOutput:
    values: Tensor
    # [..., u] query positions that received exact attention (ProbSparse only)
    selected_query_indices: np.ndarray | None = None


def _check(q: Tensor, k: Tensor, v: Tensor) -> None:
    if q.ndim < 2 or k.ndim != q.ndim or v.ndim != q.ndim:
        raise ShapeError(f"attention operands must share rank >= 2: {q.shape}, {k.shape}, {v.shape}")
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query/key widths differ: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"keys and values must share length: {k.shape} vs {v.shape}")
    if not q.shape[:-2] == k.shape[:-2] == v.shape[:-2]:
        raise ShapeError(f"leading dimensions differ: {q.shape}, {k.shape}, {v.shape}")


def full_attention(q: Tensor, k: Tensor, v: Tensor) -> AttentionOutput:
    """``softmax(q k^T / sqrt(d)) v``; materializes the L_Q x L_K score matrix."""
    _check(q, k, v)
    scores = scale(matmul(q, swap_last(k)), 1.0 / math.sqrt(q.shape[-1]))
    return AttentionOutput(matmul(softmax_last_axis(scores), v))


def sample_count(c: int, length: int) -> int:
    """``min(length, c * ceil(ln length))``, the ProbSparse budget."""
    return min(length, c * math.ceil(math.log(length))) if length > 1 else 0


def sparsity_measurement(q: np.ndarray, k_sample: np.ndarray) -> np.ndarray:
    """Max minus mean of the scaled scores of each query over sampled keys."""
    s = (q @ np.swapaxes(k_sample, -1, -2)) / math.sqrt(q.shape[-1])
    return s.max(axis=-1) - s.mean(axis=-1)


def top_queries(measure: np.ndarray, u: int) -> np.ndarray:
    """Indices of the ``u`` largest entries along the last axis.

    Stable sort on the negated measure breaks ties toward the lower index.
    Returned indices are sorted ascending within each slice.
    """
    order = np.argsort(-measure, axis=-1, kind="stable")[..., :u]
    return np.sort(order, axis=-1)


def probsparse_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    c: int,
    rng: np.random.Generator | int = 0,
) -> AttentionOutput:
    """ProbSparse self-attention.

    1. Sample ``U = min(L_K, c*ceil(ln L_K))`` key positions without
       replacement (shared across leading axes).
    2. Score each query by max minus mean of its scaled dot products with the
       sampled keys.
    3. Keep the top ``u = min(L_Q, c*ceil(ln L_Q))`` queries (ties to the
       lower index); they attend exactly over all keys.
    4. Every other query outputs the mean of ``v`` over time.
    """
    _check(q, k, v)
    if c < 1:
        raise ValueError("sampling factor must be >= 1")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    L_Q, L_K = q.shape[-2], k.shape[-2]
    u = sample_count(c, L_Q)
    n_keys = max(1, sample_count(c, L_K))

    v_mean = mean(v, axis=-2, keepdims=True)
    context = expand(v_mean, v_mean.shape[:-2] + (L_Q, v.shape[-1]))
    if u == 0:
        empty = np.zeros(q.shape[:-2] + (0,), dtype=np.int64)
        return AttentionOutput(context, empty)

    key_idx = np.sort(rng.choice(L_K, size=n_keys, replace=False))
    measure = sparsity_measurement(q.data, k.data[..., key_idx, :])
    selected = top_queries(measure, u)

    q_top = take_rows(q, selected)
    scores = scale(matmul(q_top, swap_last(k)), 1.0 / math.sqrt(q.shape[-1]))
    rows = matmul(softmax_last_axis(scores), v)
    return AttentionOutput(put_rows(context, selected, rows), selected)
