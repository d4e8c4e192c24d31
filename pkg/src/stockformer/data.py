"""Hourly OHLCV ingestion, return transforms, panel alignment and windowing."""

from __future__ import annotations

import csv
import logging
import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import requests

from .errors import AuthError, DataError, NetworkError, RetryExhaustedError, SchemaError

logger = logging.getLogger(__name__)

BAR_COLUMNS = ("ticker", "timestamp", "open", "high", "low", "close", "volume")
HOUR = 3600
MODES = ("percent", "log_percent")


@dataclass(frozen=True)
class Bar:
    ticker: str
    timestamp: int
    open: float
    high: float
    low: float
    close: float
    volume: float

    def __post_init__(self):
        if not self.ticker:
            raise DataError("empty ticker")
        if self.timestamp % HOUR != 0:
            raise DataError(f"{self.ticker}@{self.timestamp}: timestamp is not hour-aligned")
        if not (self.open > 0 and self.close > 0):
            raise DataError(f"{self.ticker}@{self.timestamp}: open and close must be positive")
        if not (self.low <= min(self.open, self.close) and max(self.open, self.close) <= self.high):
            raise DataError(f"{self.ticker}@{self.timestamp}: low/high do not bracket open/close")
        if self.volume < 0:
            raise DataError(f"{self.ticker}@{self.timestamp}: negative volume")


BarSeries = list  # list[Bar], chronological, one ticker


# -- CSV --------------------------------------------------------------------


def _fmt(x: float) -> str:
    # repr gives the shortest string that round-trips to the same double
    return repr(float(x))


def write_bars_csv(bars: Iterable[Bar], path) -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BAR_COLUMNS)
        for b in bars:
            w.writerow([b.ticker, b.timestamp, _fmt(b.open), _fmt(b.high), _fmt(b.low), _fmt(b.close), _fmt(b.volume)])


def load_bars_csv(path) -> dict[str, list[Bar]]:
    """Parse a bar CSV into chronological per-ticker series.

    Rows of different tickers may interleave, but within one ticker the
    timestamps must strictly increase.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    series: dict[str, list[Bar]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        missing = [c for c in BAR_COLUMNS if c not in header]
        if missing or len(header) != len(BAR_COLUMNS):
            raise SchemaError(f"{path}: header {header} does not match {list(BAR_COLUMNS)} (missing {missing})")
        col = {name: header.index(name) for name in BAR_COLUMNS}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(BAR_COLUMNS):
                raise DataError(f"{path}:{lineno}: expected {len(BAR_COLUMNS)} fields, got {len(row)}")
            try:
                bar = Bar(
                    ticker=row[col["ticker"]],
                    timestamp=int(row[col["timestamp"]]),
                    open=float(row[col["open"]]),
                    high=float(row[col["high"]]),
                    low=float(row[col["low"]]),
                    close=float(row[col["close"]]),
                    volume=float(row[col["volume"]]),
                )
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            prev = series.get(bar.ticker)
            if prev and bar.timestamp <= prev[-1].timestamp:
                raise DataError(
                    f"{path}:{lineno}: {bar.ticker} timestamp {bar.timestamp} is not after {prev[-1].timestamp}"
                )
            series.setdefault(bar.ticker, []).append(bar)
    return series


# -- HTTP aggregates client -------------------------------------------------


def fetch_bars_http(
    base_url: str,
    ticker: str,
    start: int,
    end: int,
    auth_token: str,
    cache_path=None,
    session: requests.Session | None = None,
    max_retries: int = 5,
    backoff: float = 0.5,
    max_backoff: float = 30.0,
    timeout: float = 30.0,
    sleep: Callable[[float], None] = time.sleep,
) -> list[Bar]:
    """Download hourly bars page by page from a generic aggregates endpoint.

    The endpoint is ``GET {base_url}/bars`` with ``ticker``, ``from``, ``to``
    and ``resolution=1h`` query parameters and a bearer token.  A response
    body is either a JSON array of ``{t, o, h, l, c, v}`` objects (single
    page) or an object ``{"bars": [...], "next": cursor}``; a non-null
    ``next`` is sent back as the ``cursor`` parameter.  ``t`` is epoch
    seconds.

    The CSV cache is written only after every page succeeded.
    """
    if not auth_token:
        raise AuthError("empty auth token")
    sess = session or requests.Session()
    url = base_url.rstrip("/") + "/bars"
    headers = {"Authorization": f"Bearer {auth_token}"}
    params = {"ticker": ticker, "from": int(start), "to": int(end), "resolution": "1h"}
    bars: list[Bar] = []
    cursor = None
    while True:
        page_params = dict(params)
        if cursor is not None:
            page_params["cursor"] = cursor
        payload = _get_with_retry(sess, url, page_params, headers, max_retries, backoff, max_backoff, timeout, sleep)
        items, cursor = _split_payload(payload)
        for item in items:
            bars.append(_bar_from_json(ticker, item))
        if cursor is None:
            break
    bars.sort(key=lambda b: b.timestamp)
    for a, b in zip(bars, bars[1:]):
        if a.timestamp == b.timestamp:
            raise SchemaError(f"{ticker}: duplicate bar at {a.timestamp}")
    if cache_path is not None:
        _atomic_write_bars(bars, Path(cache_path))
    return bars


def _get_with_retry(sess, url, params, headers, max_retries, backoff, max_backoff, timeout, sleep):
    attempt = 0
    while True:
        try:
            resp = sess.get(url, params=params, headers=headers, timeout=timeout)
        except requests.RequestException as exc:
            raise NetworkError(f"GET {url} failed: {exc}") from exc
        status = resp.status_code
        if status == 200:
            try:
                return resp.json()
            except ValueError as exc:
                raise SchemaError(f"GET {url}: response is not JSON") from exc
        if status == 429 or status >= 500:
            if attempt >= max_retries:
                raise RetryExhaustedError(f"GET {url}: HTTP {status} after {attempt} retries")
            delay = min(max_backoff, backoff * 2**attempt)
            attempt += 1
            logger.warning("GET %s returned HTTP %d; retry %d/%d in %.2fs", url, status, attempt, max_retries, delay)
            sleep(delay)
            continue
        if 400 <= status < 500:
            raise AuthError(f"GET {url}: HTTP {status} (check token and request parameters)")
        raise SchemaError(f"GET {url}: unexpected HTTP {status}")


def _split_payload(payload):
    if isinstance(payload, list):
        return payload, None
    if isinstance(payload, dict) and isinstance(payload.get("bars"), list):
        nxt = payload.get("next")
        return payload["bars"], (None if nxt in (None, "") else nxt)
    raise SchemaError("payload must be a JSON array or an object with a 'bars' array")


def _bar_from_json(ticker: str, item) -> Bar:
    if not isinstance(item, dict):
        raise SchemaError(f"bar entry is not an object: {item!r}")
    missing = [k for k in "tohlcv" if k not in item]
    if missing:
        raise SchemaError(f"bar entry missing fields {missing}: {item!r}")
    try:
        return Bar(
            ticker=ticker,
            timestamp=int(item["t"]),
            open=float(item["o"]),
            high=float(item["h"]),
            low=float(item["l"]),
            close=float(item["c"]),
            volume=float(item["v"]),
        )
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"bad bar entry {item!r}: {exc}") from None


def _atomic_write_bars(bars, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    os.close(fd)
    try:
        write_bars_csv(bars, tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- returns ------------------------------------------------------------------


def percent_change(bar: Bar) -> float:
    """Intra-hour change rate ``close/open - 1``."""
    if bar.open <= 0:
        raise DataError("open must be positive")
    return bar.close / bar.open - 1.0


def log_percent_change(bar: Bar) -> float:
    """``ln(close/open)``, evaluated as ``log1p(percent_change)``.

    Going through the change rate keeps ``log = log1p(pct)`` exact in
    floating point, which the panel consistency check relies on.
    """
    if bar.open <= 0 or bar.close <= 0:
        raise DataError("prices must be positive")
    return math.log1p(percent_change(bar))


# -- panel --------------------------------------------------------------------


@dataclass
class AlignedPanel:
    tickers: list[str]
    target: str
    timestamps: np.ndarray  # int64 [T]
    returns: np.ndarray  # float64 [T, s_in]
    mode: str
    closes: np.ndarray | None = field(default=None, repr=False)
    opens: np.ndarray | None = field(default=None, repr=False)

    @property
    def target_index(self) -> int:
        return self.tickers.index(self.target)

    def __len__(self) -> int:
        return len(self.timestamps)

    def to_pct(self) -> np.ndarray:
        return self.returns if self.mode == "percent" else np.expm1(self.returns)


def is_regular_market_hour(ts: int) -> bool:
    """True for bars starting 09:00-15:00 New York time on weekdays."""
    from zoneinfo import ZoneInfo

    local = datetime.fromtimestamp(ts, tz=timezone.utc).astimezone(ZoneInfo("America/New_York"))
    return local.weekday() < 5 and 9 <= local.hour <= 15


def align_panel(
    series: Mapping[str, Sequence[Bar]],
    target: str,
    mode: str = "log_percent",
    tickers: Sequence[str] | None = None,
    market_hours_only: bool = False,
) -> AlignedPanel:
    """Intersect timestamps across tickers and compute per-hour returns."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    tickers = list(tickers) if tickers is not None else list(series)
    if not tickers:
        raise DataError("no tickers")
    if target not in tickers:
        raise DataError(f"target {target!r} not among tickers {tickers}")
    for t in tickers:
        if t not in series:
            raise DataError(f"no bars for ticker {t!r}")
    by_ts = {t: {b.timestamp: b for b in series[t]} for t in tickers}
    common = set(by_ts[tickers[0]])
    for t in tickers[1:]:
        common &= set(by_ts[t])
    if market_hours_only:
        common = {ts for ts in common if is_regular_market_hour(ts)}
    if not common:
        raise DataError("tickers share no timestamps")
    stamps = np.array(sorted(common), dtype=np.int64)
    fn = log_percent_change if mode == "log_percent" else percent_change
    returns = np.array([[fn(by_ts[t][int(ts)]) for t in tickers] for ts in stamps], dtype=np.float64)
    opens = np.array([[by_ts[t][int(ts)].open for t in tickers] for ts in stamps], dtype=np.float64)
    closes = np.array([[by_ts[t][int(ts)].close for t in tickers] for ts in stamps], dtype=np.float64)
    return AlignedPanel(tickers, target, stamps, returns, mode, closes=closes, opens=opens)


def write_panel_csv(panel: AlignedPanel, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", *panel.tickers])
        for ts, row in zip(panel.timestamps, panel.returns):
            w.writerow([int(ts), *(_fmt(v) for v in row)])


def load_panel_csv(path, target: str | None = None, mode: str = "log_percent") -> AlignedPanel:
    """Read a ``timestamp,<ticker>...`` return matrix written by ``write_panel_csv``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if len(header) < 2 or header[0] != "timestamp":
            raise SchemaError(f"{path}: header must be 'timestamp,<ticker>,...'")
        tickers = header[1:]
        stamps, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                stamps.append(int(row[0]))
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    stamps_arr = np.array(stamps, dtype=np.int64)
    if np.any(np.diff(stamps_arr) <= 0):
        bad = int(np.argmax(np.diff(stamps_arr) <= 0)) + 3
        raise DataError(f"{path}:{bad}: timestamps not strictly increasing")
    return AlignedPanel(tickers, target or tickers[0], stamps_arr, np.array(rows, dtype=np.float64), mode)


# -- windows and splits -------------------------------------------------------


@dataclass
class WindowedDataset:
    inputs: np.ndarray  # [N, n, s_in]
    targets: np.ndarray  # [N]
    target_timestamps: np.ndarray  # [N]
    last_input_timestamps: np.ndarray  # [N]
    n: int
    mode: str
    tickers: list[str]
    target: str

    def __len__(self) -> int:
        return len(self.targets)

    def target_pct(self) -> np.ndarray:
        """Targets as change rates, whatever the panel mode."""
        return self.targets if self.mode == "percent" else np.expm1(self.targets)

    def subset(self, start: int, stop: int) -> "WindowedDataset":
        return WindowedDataset(
            self.inputs[start:stop],
            self.targets[start:stop],
            self.target_timestamps[start:stop],
            self.last_input_timestamps[start:stop],
            self.n,
            self.mode,
            list(self.tickers),
            self.target,
        )


def make_windows(panel: AlignedPanel, n: int, contiguous: bool = False) -> WindowedDataset:
    """Slice the panel into ``(rows i..i+n-1, target row i+n)`` samples.

    With ``contiguous`` set, samples whose window or target spans a gap
    (consecutive rows more than one hour apart) are dropped, so every kept
    target is exactly one hour after its last input.
    """
    T = len(panel)
    if n < 1:
        raise ValueError("window length must be >= 1")
    if n >= T:
        raise DataError(f"window length {n} needs a panel longer than {T} rows")
    starts = np.arange(T - n)
    if contiguous:
        step_ok = np.diff(panel.timestamps) == HOUR  # step_ok[j]: row j -> j+1
        bad_prefix = np.concatenate([[0], np.cumsum(~step_ok)])
        # rows i..i+n must be linked by n one-hour steps
        starts = starts[(bad_prefix[starts + n] - bad_prefix[starts]) == 0]
    idx = starts[:, None] + np.arange(n)[None, :]
    tgt = panel.target_index
    return WindowedDataset(
        inputs=panel.returns[idx],
        targets=panel.returns[starts + n, tgt].copy(),
        target_timestamps=panel.timestamps[starts + n].copy(),
        last_input_timestamps=panel.timestamps[starts + n - 1].copy(),
        n=n,
        mode=panel.mode,
        tickers=list(panel.tickers),
        target=panel.target,
    )


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.7
    val_frac: float = 0.15
    test_frac: float = 0.15

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if any(f < 0 for f in fracs):
            raise ValueError(f"split fractions must be non-negative: {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fracs)}")


def chronological_split(dataset: WindowedDataset, spec: SplitSpec):
    """Contiguous train/val/test segments in time order (no shuffling)."""
    N = len(dataset)
    n_train = int(round(N * spec.train_frac))
    n_val = min(int(round(N * spec.val_frac)), N - n_train)
    return (
        dataset.subset(0, n_train),
        dataset.subset(n_train, n_train + n_val),
        dataset.subset(n_train + n_val, N),
    )


def fit_scales(train: WindowedDataset, floor: float = 1e-12) -> tuple[tuple[float, ...], float]:
    """Per-channel input RMS and target RMS of a training split.

    Root-mean-square (not centred std) so that a zero return stays zero.
    """
    flat = train.inputs.reshape(-1, train.inputs.shape[-1])
    inp = np.sqrt(np.mean(flat**2, axis=0))
    out = float(np.sqrt(np.mean(train.targets**2)))
    return tuple(float(max(v, floor)) for v in inp), max(out, floor)
