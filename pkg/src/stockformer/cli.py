"""Command line entry point: ingest -> granger -> train -> backtest -> report.

Exit codes: 0 success, 2 configuration/validation error, 3 runtime failure
(training abort, I/O, data or network errors), 1 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .backtest import compare_reports, emit_curve_csv, run_strategy, StrategyKind
from .causality import GrangerConfig, causality_matrix, select_target
from .config import RunConfig, load_config
from .data import (
    align_panel,
    chronological_split,
    fetch_bars_http,
    fit_scales,
    load_bars_csv,
    load_panel_csv,
    make_windows,
    write_bars_csv,
    write_panel_csv,
)
from .errors import ConfigError, DataError, FetchError, StockformerError, TrainingAborted
from .model.checkpoint import load_checkpoint, save_checkpoint
from .model.lstm import LSTMBaselineConfig, LSTMModel
from .model.stockformer import ModelConfig, StockformerModel
from .training.loop import predict, train_loop

logger = logging.getLogger("stockformer")

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

SEED_MODEL, SEED_TRAIN, SEED_LSTM, SEED_LSTM_TRAIN = 0, 1, 2, 3


def write_manifest(out_dir: Path, subcommand: str, config_hash: str, seed: int) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"subcommand": subcommand, "config_sha256": config_hash, "version": __version__, "seed": seed}
    (out_dir / f"manifest_{subcommand}.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


# -- pipeline pieces ------------------------------------------------------------


def _load_series(cfg: RunConfig):
    series = load_bars_csv(cfg.bars_csv)
    missing = [t for t in cfg.tickers if t not in series]
    if missing:
        raise DataError(f"{cfg.bars_csv} has no bars for {missing}")
    return series


def _resolve_target(cfg: RunConfig, series) -> tuple[str, object]:
    if cfg.target != "auto":
        return cfg.target, None
    panel = align_panel(series, cfg.tickers[0], cfg.panel_mode, cfg.tickers, cfg.market_hours_only)
    matrix = causality_matrix(panel, cfg.granger)
    return select_target(matrix), matrix


def _datasets(cfg: RunConfig):
    series = _load_series(cfg)
    target, matrix = _resolve_target(cfg, series)
    panel = align_panel(series, target, cfg.panel_mode, cfg.tickers, cfg.market_hours_only)
    ds = make_windows(panel, cfg.window, contiguous=cfg.contiguous_windows)
    train, val, test = chronological_split(ds, cfg.split)
    if min(len(train), len(val), len(test)) == 0:
        raise DataError(f"split produced an empty segment ({len(train)}/{len(val)}/{len(test)} samples)")
    return panel, matrix, train, val, test


def _model_config(cfg: RunConfig, train) -> ModelConfig:
    opts = dict(cfg.model)
    standardize = opts.pop("standardize", True)
    kwargs = dict(n=cfg.window, s_in=len(cfg.tickers), seed=cfg.derived_seed(SEED_MODEL), **opts)
    if standardize:
        kwargs["input_scale"], kwargs["output_scale"] = fit_scales(train)
    return ModelConfig(**kwargs)


# -- subcommands ------------------------------------------------------------------


def cmd_ingest(args) -> int:
    cfg = load_config(args.config, require_data=False)
    if cfg.http is not None:
        token = os.environ.get(cfg.http.token_env, "")
        if not token:
            raise ConfigError(f"environment variable {cfg.http.token_env} is not set")
        bars = []
        for t in cfg.tickers:
            bars.extend(fetch_bars_http(cfg.http.base_url, t, cfg.http.start, cfg.http.end, token))
        cfg.bars_csv.parent.mkdir(parents=True, exist_ok=True)
        write_bars_csv(bars, cfg.bars_csv)
    elif not cfg.bars_csv.exists():
        raise ConfigError(f"data file not found: {cfg.bars_csv}")
    series = _load_series(cfg)
    target = cfg.tickers[0] if cfg.target == "auto" else cfg.target
    panel = align_panel(series, target, cfg.panel_mode, cfg.tickers, cfg.market_hours_only)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    write_panel_csv(panel, cfg.output_dir / "panel.csv")
    write_manifest(cfg.output_dir, "ingest", cfg.sha256(), cfg.seed)
    print(f"panel: {len(panel)} hours x {len(panel.tickers)} tickers -> {cfg.output_dir / 'panel.csv'}")
    return EXIT_OK


def cmd_granger(args) -> int:
    if args.config:
        cfg = load_config(args.config)
        series = _load_series(cfg)
        panel = align_panel(series, cfg.tickers[0], cfg.panel_mode, cfg.tickers, cfg.market_hours_only)
        gcfg = GrangerConfig(args.lag if args.lag is not None else cfg.granger.lag, cfg.granger.significance)
    elif args.panel:
        if not Path(args.panel).exists():
            raise ConfigError(f"panel file not found: {args.panel}")
        panel = load_panel_csv(args.panel)
        gcfg = GrangerConfig(args.lag if args.lag is not None else 4)
    else:
        raise ConfigError("granger needs --panel or --config")
    matrix = causality_matrix(panel, gcfg)
    text = matrix.to_csv()
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        write_manifest(out.parent, "granger", _hash_args(vars(args)), 0)
    elif args.config:
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        (cfg.output_dir / "granger.csv").write_text(text)
        write_manifest(cfg.output_dir, "granger", cfg.sha256(), cfg.seed)
    return EXIT_OK


def _hash_args(d: dict) -> str:
    import hashlib

    clean = {k: v for k, v in d.items() if k != "func"}
    return hashlib.sha256(json.dumps(clean, sort_keys=True, default=str).encode()).hexdigest()


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    panel, matrix, train, val, test = _datasets(cfg)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    if matrix is not None:
        (out / "granger.csv").write_text(matrix.to_csv())

    mcfg = _model_config(cfg, train)
    tcfg = replace(cfg.train, seed=cfg.derived_seed(SEED_TRAIN))
    model, log = train_loop(StockformerModel(mcfg), train, val, tcfg, checkpoint_path=out / "stockformer.ckpt")
    save_checkpoint(model, out / "stockformer.ckpt")
    log.write(out)
    print(f"stockformer: best val loss {log.best_val_loss:.6g} at epoch {log.best_epoch}; target {panel.target}")
    if log.gridlock_epochs:
        print(f"warning: gradient norm collapsed (gridlock) at epochs {log.gridlock_epochs}")

    if cfg.lstm is not None:
        lcfg = LSTMBaselineConfig(n=cfg.window, s_in=len(cfg.tickers), seed=cfg.derived_seed(SEED_LSTM), **cfg.lstm)
        ltcfg = replace(cfg.train, seed=cfg.derived_seed(SEED_LSTM_TRAIN))
        lmodel, llog = train_loop(LSTMModel(lcfg), train, val, ltcfg, checkpoint_path=out / "lstm.ckpt")
        save_checkpoint(lmodel, out / "lstm.ckpt")
        llog.write(out / "lstm")
        print(f"lstm: best val loss {llog.best_val_loss:.6g} at epoch {llog.best_epoch}")

    (out / "target.txt").write_text(panel.target + "\n")
    write_manifest(out, "train", cfg.sha256(), cfg.seed)
    return EXIT_OK


def _backtest_split(cfg: RunConfig, out: Path, split_name: str, ds) -> dict:
    models = {"stockformer": out / "stockformer.ckpt"}
    if (out / "lstm.ckpt").exists():
        models["lstm"] = out / "lstm.ckpt"
    pct = ds.target_pct()
    reports = {}
    for label, path in models.items():
        model = load_checkpoint(path)
        preds = predict(model, ds)
        rep, curve = run_strategy(preds, pct, cfg.strategy, ds.target_timestamps, cfg.cost)
        emit_curve_csv(curve, out / f"curve_{split_name}_{label}.csv")
        reports[label] = rep
    rep, curve = run_strategy(np.zeros(len(ds)), pct, StrategyKind.zeros(), ds.target_timestamps)
    emit_curve_csv(curve, out / f"curve_{split_name}_zeros.csv")
    reports["zeros"] = rep
    return reports


def cmd_backtest(args) -> int:
    cfg = load_config(args.config)
    out = cfg.output_dir
    if not (out / "stockformer.ckpt").exists():
        raise ConfigError(f"no checkpoint at {out / 'stockformer.ckpt'}; run 'train' first")
    if cfg.target == "auto" and (out / "target.txt").exists():
        cfg = replace(cfg, target=(out / "target.txt").read_text().strip())
    _, _, _, val, test = _datasets(cfg)
    for split_name, ds in (("val", val), ("test", test)):
        comparison = compare_reports(_backtest_split(cfg, out, split_name, ds))
        (out / f"comparison_{split_name}.csv").write_text(comparison.to_csv())
        print(f"[{split_name}] strategy={cfg.strategy.name}")
        print(comparison.render())
    write_manifest(out, "backtest", cfg.sha256(), cfg.seed)
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = load_config(args.config, require_data=False)
    out = cfg.output_dir
    log_path = out / "train_log.csv"
    if not log_path.exists():
        raise ConfigError(f"no training log at {log_path}; run 'train' first")
    with open(log_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    best = min(rows, key=lambda r: float(r["val_loss"]))
    print(f"epochs: {len(rows)}  best val loss {float(best['val_loss']):.6g} at epoch {best['epoch']}")
    for split_name in ("val", "test"):
        path = out / f"comparison_{split_name}.csv"
        if not path.exists():
            continue
        with open(path, newline="") as fh:
            table = list(csv.DictReader(fh))
        print(f"[{split_name}]")
        for r in table:
            print(f"  {r['rank']}. {r['label']:<12} ROI {float(r['roi']):+.4%}  max drawdown {float(r['max_drawdown']):.4%}")
    write_manifest(out, "report", cfg.sha256(), cfg.seed)
    return EXIT_OK


def cmd_selftest(args) -> int:
    from . import selftest

    return EXIT_OK if selftest.run() else EXIT_INTERNAL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stockformer", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="fetch or validate bars and write the aligned return panel")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("granger", help="pairwise Granger p-value matrix and target selection")
    s.add_argument("--panel", help="panel CSV (timestamp,<ticker>...)")
    s.add_argument("--config")
    s.add_argument("--lag", type=int)
    s.add_argument("--out", help="also write the matrix CSV here")
    s.set_defaults(func=cmd_granger)

    s = sub.add_parser("train", help="train Stockformer (and the LSTM baseline if configured)")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("backtest", help="equity curves and comparison on validation and test splits")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_backtest)

    s = sub.add_parser("report", help="summarize a finished run")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("selftest", help="finite-difference and ProbSparse oracle checks")
    s.set_defaults(func=cmd_selftest)
    return p


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingAborted, DataError, FetchError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (StockformerError, AssertionError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
