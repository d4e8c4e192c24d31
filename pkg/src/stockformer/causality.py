"""Pairwise linear Granger-causality screening and target selection."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import betainc

from .data import AlignedPanel
from .errors import DataError

RIDGE_JITTER = 1e-10


@dataclass(frozen=True)
class GrangerConfig:
    lag: int = 4
    significance: float = 0.05

    def __post_init__(self):
        if self.lag < 1:
            raise ValueError("lag must be >= 1")
        if not 0.0 < self.significance < 1.0:
            raise ValueError("significance must be in (0, 1)")


@dataclass
class OLSFit:
    coefficients: np.ndarray
    rss: float
    n_obs: int
    n_regressors: int


def ols_fit(X: np.ndarray, y: np.ndarray) -> OLSFit:
    """Least squares through the normal equations.

    The diagonal of X'X is inflated by a relative jitter (``1e-10`` times
    itself), which keeps collinear designs solvable and leaves the fit
    equivariant under per-column rescaling.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n_obs, p = X.shape
    if n_obs <= p:
        raise DataError(f"OLS needs more observations ({n_obs}) than regressors ({p})")
    xtx = X.T @ X
    diag = np.diag(xtx).copy()
    xtx[np.diag_indices(p)] += RIDGE_JITTER * np.where(diag > 0, diag, 1.0)
    beta = np.linalg.solve(xtx, X.T @ y)
    resid = y - X @ beta
    return OLSFit(beta, float(resid @ resid), n_obs, p)


def _lag_matrix(series: np.ndarray, lag: int) -> np.ndarray:
    # column k-1 holds series[t-k] for t = lag..T-1
    T = len(series)
    return np.column_stack([series[lag - k : T - k] for k in range(1, lag + 1)])


def f_survival(f: float, df_num: float, df_den: float) -> float:
    """P(F > f) for an F(df_num, df_den) variable via the incomplete beta."""
    if f <= 0:
        return 1.0
    return float(betainc(df_den / 2.0, df_num / 2.0, df_den / (df_den + df_num * f)))


def granger_test(x: Sequence[float], y: Sequence[float], lag: int) -> tuple[float, float]:
    """F statistic and p-value for "x Granger-causes y".

    Restricted model: y on an intercept and its own lags 1..lag.  Unrestricted
    model: additionally x's lags 1..lag.  Both are fit on the ``T - lag``
    rows where every lag exists.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError("x and y must be 1-d series of equal length")
    T = len(y)
    n_obs = T - lag
    df_den = n_obs - 2 * lag - 1
    if df_den < 1:
        raise DataError(f"series of length {T} too short for lag {lag} (need > {3 * lag + 1})")
    target = y[lag:]
    ones = np.ones((n_obs, 1))
    ylags = _lag_matrix(y, lag)
    restricted = ols_fit(np.hstack([ones, ylags]), target)
    unrestricted = ols_fit(np.hstack([ones, ylags, _lag_matrix(x, lag)]), target)
    centered = target - target.mean()
    scale = float(centered @ centered)
    if unrestricted.rss <= 1e-20 * max(scale, np.finfo(float).tiny):
        raise DataError("unrestricted model fits exactly; series are degenerate")
    f = max(0.0, (restricted.rss - unrestricted.rss) / lag) / (unrestricted.rss / df_den)
    return f, f_survival(f, lag, df_den)


def granger_p_value(x: Sequence[float], y: Sequence[float], lag: int) -> float:
    return granger_test(x, y, lag)[1]


@dataclass
class CausalityMatrix:
    """``p[i][j]``: p-value of "ticker j helps forecast ticker i"; row i is the Y."""

    tickers: list[str]
    p: np.ndarray

    def row_sums(self) -> np.ndarray:
        return self.p.sum(axis=1)

    def to_csv(self, selected: str | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["", *self.tickers, "row_sum"])
        for name, row, total in zip(self.tickers, self.p, self.row_sums()):
            w.writerow([f"{name}_Y", *(f"{v:.4f}" for v in row), f"{total:.4f}"])
        w.writerow(["selected_target", selected if selected is not None else select_target(self)])
        return buf.getvalue()


def causality_matrix(panel: AlignedPanel, config: GrangerConfig = GrangerConfig(), workers: int = 1) -> CausalityMatrix:
    k = len(panel.tickers)
    if k < 2:
        raise DataError("causality screening needs at least two tickers")
    data = panel.returns
    pairs = [(i, j) for i in range(k) for j in range(k) if i != j]

    def _one(pair):
        i, j = pair
        return granger_p_value(data[:, j], data[:, i], config.lag)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            values = list(pool.map(_one, pairs))
    else:
        values = [_one(pr) for pr in pairs]
    p = np.ones((k, k))
    for (i, j), v in zip(pairs, values):
        p[i, j] = v
    return CausalityMatrix(list(panel.tickers), p)


def select_target(matrix: CausalityMatrix) -> str:
    """Ticker whose row of p-values sums lowest; ties go to the earlier ticker."""
    if not matrix.tickers:
        raise DataError("empty causality matrix")
    # np.argmin returns the first minimum
    return matrix.tickers[int(np.argmin(matrix.row_sums()))]
