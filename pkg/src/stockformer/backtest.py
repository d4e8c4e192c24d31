"""Turn predictions into positions, equity curves and comparison tables."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import BankruptcyError, DataError


@dataclass(frozen=True)
class StrategyKind:
    """``direction`` (sign with abstain threshold), ``tanh`` or ``zeros``."""

    name: str
    threshold: float = 0.0

    def __post_init__(self):
        if self.name not in ("direction", "tanh", "zeros"):
            raise ValueError(f"unknown strategy {self.name!r}")
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")

    @classmethod
    def direction(cls, threshold: float = 0.0) -> "StrategyKind":
        return cls("direction", threshold)

    @classmethod
    def tanh(cls) -> "StrategyKind":
        return cls("tanh")

    @classmethod
    def zeros(cls) -> "StrategyKind":
        return cls("zeros")


@dataclass
class EquityCurve:
    timestamps: np.ndarray  # [steps + 1]
    values: np.ndarray  # [steps + 1], values[0] == 1.0


@dataclass
class BacktestReport:
    strategy: StrategyKind
    roi: float
    positions: np.ndarray
    factors: np.ndarray
    trades_taken: int
    trades_skipped: int
    max_drawdown: float
    timestamps: np.ndarray = field(repr=False, default=None)


def positions_for(predictions, kind: StrategyKind) -> np.ndarray:
    preds = np.asarray(predictions, dtype=np.float64)
    if kind.name == "zeros":
        return np.zeros_like(preds)
    if kind.name == "tanh":
        return np.tanh(preds)
    # sign(0) is 0, so a zero output never trades even at threshold 0
    return np.where(np.abs(preds) > kind.threshold, np.sign(preds), 0.0)


def step_factors(positions, pct_changes, cost: float = 0.0) -> np.ndarray:
    pos = np.asarray(positions, dtype=np.float64)
    pct = np.asarray(pct_changes, dtype=np.float64)
    factors = 1.0 + pos * pct
    if cost:
        factors = np.where(pos != 0, factors * (1.0 - cost), factors)
    bad = np.flatnonzero(factors <= 0)
    if bad.size:
        raise BankruptcyError(f"step {int(bad[0])}: factor {factors[bad[0]]:.6g} wipes out the portfolio")
    return factors


def max_drawdown(values) -> float:
    """Largest peak-to-trough loss as a fraction of the peak (extra metric)."""
    v = np.asarray(values, dtype=np.float64)
    peaks = np.maximum.accumulate(v)
    return float(np.max(1.0 - v / peaks)) if v.size else 0.0


def run_strategy(
    predictions: Sequence[float],
    pct_changes: Sequence[float],
    kind: StrategyKind,
    timestamps: Sequence[int] | None = None,
    cost: float = 0.0,
    start_timestamp: int | None = None,
) -> tuple[BacktestReport, EquityCurve]:
    """Simulate full reinvestment each hour.

    ``timestamps`` label each step (the hour whose return is realized).  The
    curve gets one extra leading point at ``start_timestamp``, defaulting to
    one hour before the first step.
    """
    preds = np.asarray(predictions, dtype=np.float64)
    pct = np.asarray(pct_changes, dtype=np.float64)
    if preds.shape != pct.shape or preds.ndim != 1:
        raise DataError(f"predictions {preds.shape} and pct changes {pct.shape} must be equal-length 1-d")
    if timestamps is None:
        ts = np.arange(1, len(pct) + 1, dtype=np.int64)
        step = 1
    else:
        ts = np.asarray(timestamps, dtype=np.int64)
        if ts.shape != pct.shape:
            raise DataError("timestamps must align with pct changes")
        step = 3600
    if start_timestamp is None:
        start_timestamp = int(ts[0]) - step if len(ts) else 0
    start = start_timestamp
    pos = positions_for(preds, kind)
    factors = step_factors(pos, pct, cost)
    values = np.concatenate([[1.0], np.cumprod(factors)])
    curve = EquityCurve(np.concatenate([[start], ts]).astype(np.int64), values)
    taken = int(np.count_nonzero(pos))
    report = BacktestReport(
        strategy=kind,
        roi=float(values[-1] - 1.0),
        positions=pos,
        factors=factors,
        trades_taken=taken,
        trades_skipped=len(pos) - taken,
        max_drawdown=max_drawdown(values),
        timestamps=ts,
    )
    return report, curve


# -- comparison -----------------------------------------------------------------


@dataclass
class ComparisonRow:
    label: str
    strategy: str
    roi: float
    max_drawdown: float
    trades_taken: int
    rank: int


@dataclass
class Comparison:
    rows: list[ComparisonRow]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rank", "label", "strategy", "roi", "max_drawdown", "trades_taken"])
        for r in self.rows:
            w.writerow([r.rank, r.label, r.strategy, repr(r.roi), repr(r.max_drawdown), r.trades_taken])
        return buf.getvalue()

    def render(self) -> str:
        head = ("rank", "label", "strategy", "ROI", "max drawdown*", "trades")
        body = [
            (str(r.rank), r.label, r.strategy, f"{r.roi:+.4%}", f"{r.max_drawdown:.4%}", str(r.trades_taken))
            for r in self.rows
        ]
        widths = [max(len(x) for x in col) for col in zip(head, *body)]
        lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in (head, *body)]
        lines.append("* max drawdown is an extra metric, not part of the ROI definition")
        return "\n".join(lines)


def compare_reports(reports: Mapping[str, BacktestReport]) -> Comparison:
    """Rank labelled reports by final ROI (ties keep insertion order)."""
    if len(reports) < 2:
        raise DataError("need at least two reports to compare")
    items = list(reports.items())
    ref = items[0][1].timestamps
    for label, rep in items[1:]:
        if rep.timestamps is None or ref is None or not np.array_equal(rep.timestamps, ref):
            raise DataError(f"report {label!r} covers different timestamps than {items[0][0]!r}")
    order = sorted(range(len(items)), key=lambda i: -items[i][1].roi)
    rows = []
    for rank, i in enumerate(order, start=1):
        label, rep = items[i]
        rows.append(ComparisonRow(label, rep.strategy.name, rep.roi, rep.max_drawdown, rep.trades_taken, rank))
    return Comparison(rows)


# -- curve CSV --------------------------------------------------------------------


def emit_curve_csv(curve: EquityCurve, path) -> None:
    path = Path(path)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["timestamp", "cumulative_return"])
            for ts, v in zip(curve.timestamps, curve.values):
                w.writerow([int(ts), repr(float(v))])
    except OSError as exc:
        raise OSError(f"cannot write equity curve to {path}: {exc}") from exc


def load_curve_csv(path) -> EquityCurve:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["timestamp", "cumulative_return"]:
            raise DataError(f"{path}: unexpected header {header}")
        rows = [r for r in reader if r]
    return EquityCurve(
        np.array([int(r[0]) for r in rows], dtype=np.int64),
        np.array([float(r[1]) for r in rows], dtype=np.float64),
    )
