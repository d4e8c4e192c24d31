"""Synthetic hourly bars with a planted lead-lag relation, for demos and tests."""

from __future__ import annotations

import numpy as np

from .data import HOUR, Bar

T0 = 1_700_000_000 - 1_700_000_000 % HOUR


def lead_lag_returns(seed: int, T: int = 700, coef: float = 0.9, sigma: float = 0.01, noise: float = 0.004) -> np.ndarray:
    """``[T, 3]`` log returns: A, B i.i.d.; C[t] = coef * A[t-1] + noise."""
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, sigma, T)
    b = rng.normal(0.0, sigma, T)
    c = np.empty(T)
    c[0] = rng.normal(0.0, sigma)
    c[1:] = coef * a[:-1] + rng.normal(0.0, noise, T - 1)
    return np.column_stack([a, b, c])


def bars_from_log_returns(tickers, log_returns: np.ndarray, start_price: float = 100.0, t0: int = T0) -> list[Bar]:
    """Chain bars so each open equals the previous close and ``ln(c/o)`` is the given return."""
    bars = []
    for j, ticker in enumerate(tickers):
        price = start_price
        for i, r in enumerate(log_returns[:, j]):
            close = price * float(np.exp(r))
            hi, lo = max(price, close), min(price, close)
            bars.append(Bar(ticker, t0 + i * HOUR, price, hi * 1.0005, lo * 0.9995, close, 1000.0 + i))
            price = close
    return bars
