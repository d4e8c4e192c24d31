"""Pointwise and trading-aware objectives."""

from __future__ import annotations

import numpy as np

from ..backtest import StrategyKind, positions_for, step_factors
from ..errors import DataError
from ..tensor import Tensor, abs_, add, ln, mean, mul, neg, sub, sum_, tanh

LOSS_KINDS = ("mse", "mae", "stock_tanh")


def _as_target(targets, like: Tensor) -> Tensor:
    arr = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=like.dtype)
    if arr.shape != like.shape:
        raise DataError(f"predictions {like.shape} and targets {arr.shape} differ in shape")
    return Tensor(arr, dtype=like.dtype)


def loss_pointwise(kind: str, preds: Tensor, targets) -> Tensor:
    if preds.size == 0:
        raise DataError("empty batch")
    diff = sub(preds, _as_target(targets, preds))
    if kind == "mse":
        return mean(mul(diff, diff))
    if kind == "mae":
        return mean(abs_(diff))
    raise ValueError(f"pointwise loss must be 'mse' or 'mae', got {kind!r}")


def loss_stock_tanh(outputs: Tensor, pct_changes) -> Tensor:
    """``-sum_t ln(1 + tanh(o_t) * pct_t)``: negated log return of the tanh strategy."""
    pct = _as_target(pct_changes, outputs)
    if np.any(pct.data <= -1.0):
        raise DataError("percent change <= -1 makes the log return undefined")
    return neg(sum_(ln(add(mul(tanh(outputs), pct), 1.0))))


def metric_stock_direction(outputs, pct_changes, threshold: float = 0.0) -> float:
    """ROI of the sign strategy; steps with ``|output| <= threshold`` sit out."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    o = outputs.data if isinstance(outputs, Tensor) else np.asarray(outputs, dtype=np.float64)
    pos = positions_for(o, StrategyKind.direction(threshold))
    return float(np.prod(step_factors(pos, pct_changes)) - 1.0)


def compute_loss(kind: str, preds: Tensor, targets, pct_changes) -> Tensor:
    if kind == "stock_tanh":
        return loss_stock_tanh(preds, pct_changes)
    return loss_pointwise(kind, preds, targets)
