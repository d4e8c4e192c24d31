"""JSON run configuration for the command line pipeline.

Unknown keys anywhere are rejected.  Relative paths resolve against the
directory holding the config file.  Example::

    {
      "data": {"bars_csv": "bars.csv"},
      "tickers": ["XOM", "CVX", "WTI"],
      "target": "auto",
      "panel_mode": "log_percent",
      "window": 32,
      "split": {"train": 0.7, "val": 0.15, "test": 0.15},
      "granger": {"lag": 4, "significance": 0.05},
      "model": {"d_model": 32, "n_heads": 4, "n_layers": 2, "attention": "probsparse"},
      "lstm": {"hidden_size": 32, "num_layers": 1},
      "train": {"epochs": 20, "batch_size": 32, "initial_lr": 1e-3, "loss": "mse"},
      "strategy": {"kind": "tanh"},
      "output_dir": "runs/demo",
      "seed": 0
    }
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backtest import StrategyKind
from .causality import GrangerConfig
from .data import MODES, SplitSpec
from .errors import ConfigError
from .training.loop import TrainConfig

_TOP_KEYS = {
    "data", "tickers", "target", "panel_mode", "window", "split", "granger",
    "model", "lstm", "train", "strategy", "output_dir", "seed",
}
_DATA_KEYS = {"bars_csv", "http", "market_hours_only", "contiguous_windows"}
_HTTP_KEYS = {"base_url", "token_env", "from", "to"}
_MODEL_KEYS = {"d_model", "n_heads", "n_layers", "d_ff", "attention", "sampling_factor", "dropout", "dtype", "standardize"}
_LSTM_KEYS = {"hidden_size", "num_layers"}
_STRATEGY_KEYS = {"kind", "threshold", "cost"}
_SPLIT_KEYS = {"train", "val", "test"}
_GRANGER_KEYS = {"lag", "significance"}


def _reject_unknown(section: str, d, allowed: set) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{section} must be a JSON object")
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown key(s) in {section}: {sorted(extra)}")
    return d


@dataclass
class HttpSource:
    base_url: str
    token_env: str
    start: int
    end: int


@dataclass
class RunConfig:
    tickers: list[str]
    target: str
    output_dir: Path
    bars_csv: Path
    http: HttpSource | None = None
    market_hours_only: bool = False
    contiguous_windows: bool = False
    panel_mode: str = "log_percent"
    window: int = 32
    split: SplitSpec = field(default_factory=SplitSpec)
    granger: GrangerConfig = field(default_factory=GrangerConfig)
    model: dict = field(default_factory=dict)
    lstm: dict | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    strategy: StrategyKind = field(default_factory=StrategyKind.tanh)
    cost: float = 0.0
    seed: int = 0
    raw: dict = field(default_factory=dict, repr=False)

    def derived_seed(self, purpose: int) -> int:
        """Independent 63-bit seed for component ``purpose``, all from ``seed``."""
        child = np.random.SeedSequence(self.seed).spawn(purpose + 1)[purpose]
        return int(child.generate_state(1, np.uint64)[0] >> np.uint64(1))

    def sha256(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def parse_config(raw: dict, base_dir: Path, require_data: bool = True) -> RunConfig:
    _reject_unknown("config", raw, _TOP_KEYS)
    for key in ("data", "tickers", "output_dir"):
        if key not in raw:
            raise ConfigError(f"config is missing {key!r}")
    data = _reject_unknown("data", raw["data"], _DATA_KEYS)
    tickers = raw["tickers"]
    if not isinstance(tickers, list) or not tickers or not all(isinstance(t, str) and t for t in tickers):
        raise ConfigError("tickers must be a non-empty list of symbols")
    if len(set(tickers)) != len(tickers):
        raise ConfigError("tickers must be unique")
    target = raw.get("target", "auto")
    if target == "auto":
        if len(tickers) < 2:
            raise ConfigError("target 'auto' needs at least two tickers")
    elif target not in tickers:
        raise ConfigError(f"target {target!r} is not in tickers")

    def resolve(p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else base_dir / p

    if "bars_csv" not in data:
        raise ConfigError("data.bars_csv is required (the HTTP source caches into it)")
    bars_csv = resolve(data["bars_csv"])
    http = None
    if data.get("http") is not None:
        h = _reject_unknown("data.http", data["http"], _HTTP_KEYS)
        missing = _HTTP_KEYS - set(h)
        if missing:
            raise ConfigError(f"data.http is missing {sorted(missing)}")
        http = HttpSource(h["base_url"], h["token_env"], int(h["from"]), int(h["to"]))
    if require_data and not bars_csv.exists():
        raise ConfigError(f"data file not found: {bars_csv}")

    mode = raw.get("panel_mode", "log_percent")
    if mode not in MODES:
        raise ConfigError(f"panel_mode must be one of {MODES}")
    window = raw.get("window", 32)
    if not isinstance(window, int) or window < 1:
        raise ConfigError("window must be a positive integer")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")

    try:
        sp = _reject_unknown("split", raw.get("split", {}), _SPLIT_KEYS)
        split = SplitSpec(sp.get("train", 0.7), sp.get("val", 0.15), sp.get("test", 0.15))
        gr = _reject_unknown("granger", raw.get("granger", {}), _GRANGER_KEYS)
        granger = GrangerConfig(**gr)
        model = dict(_reject_unknown("model", raw.get("model", {}), _MODEL_KEYS))
        lstm = raw.get("lstm")
        if lstm is not None:
            lstm = dict(_reject_unknown("lstm", lstm, _LSTM_KEYS))
        train_raw = dict(raw.get("train", {}))
        if "seed" in train_raw:
            raise ConfigError("train.seed is derived from the top-level seed; remove it")
        train = TrainConfig.from_dict(train_raw)
        st = _reject_unknown("strategy", raw.get("strategy", {"kind": "tanh"}), _STRATEGY_KEYS)
        strategy = StrategyKind(st.get("kind", "tanh"), float(st.get("threshold", 0.0)))
        cost = float(st.get("cost", 0.0))
        if not 0.0 <= cost < 1.0:
            raise ConfigError("strategy.cost must be in [0, 1)")
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None

    cfg = RunConfig(
        tickers=list(tickers),
        target=target,
        output_dir=resolve(raw["output_dir"]),
        bars_csv=bars_csv,
        http=http,
        market_hours_only=bool(data.get("market_hours_only", False)),
        contiguous_windows=bool(data.get("contiguous_windows", False)),
        panel_mode=mode,
        window=window,
        split=split,
        granger=granger,
        model=model,
        lstm=lstm,
        train=train,
        strategy=strategy,
        cost=cost,
        seed=seed,
        raw=raw,
    )
    return cfg


def load_config(path, require_data: bool = True) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return parse_config(raw, path.parent, require_data)
