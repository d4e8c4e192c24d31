import json
import subprocess
import sys
from pathlib import Path

import pytest

from stockformer.cli import run_command
from stockformer.config import load_config, parse_config
from stockformer.data import write_bars_csv
from stockformer.errors import ConfigError
from stockformer.synthetic import T0, bars_from_log_returns, lead_lag_returns

from test_data import _js, _Server

BASE = {
    "data": {"bars_csv": "bars.csv"},
    "tickers": ["A", "B", "C"],
    "target": "auto",
    "window": 8,
    "model": {"d_model": 8, "n_heads": 2, "n_layers": 1, "d_ff": 16, "dropout": 0.05},
    "lstm": {"hidden_size": 4},
    "train": {"epochs": 2, "batch_size": 32, "initial_lr": 0.003, "shuffle": True},
    "strategy": {"kind": "tanh"},
    "output_dir": "run",
    "seed": 11,
}


def setup_run(tmp_path, T=240, **overrides):
    write_bars_csv(bars_from_log_returns(["A", "B", "C"], lead_lag_returns(0, T)), tmp_path / "bars.csv")
    cfg = {**BASE, **overrides}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


# -- config ------------------------------------------------------------------------


def test_missing_data_file_exit_2_names_path(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({**BASE, "data": {"bars_csv": "nowhere.csv"}}))
    assert run_command(["train", "--config", str(path)]) == 2
    assert "nowhere.csv" in capsys.readouterr().err


@pytest.mark.parametrize(
    "patch",
    [
        {"modle": {}},
        {"model": {"d_modle": 8}},
        {"train": {"epochs": 2, "seed": 3}},
        {"target": "ZZZ"},
        {"window": 0},
        {"split": {"train": 0.5, "val": 0.2, "test": 0.2}},
        {"strategy": {"kind": "martingale"}},
    ],
)
def test_invalid_configs_exit_2(tmp_path, patch):
    path = setup_run(tmp_path, **patch)
    assert run_command(["train", "--config", str(path)]) == 2


def test_auto_target_needs_two_tickers(tmp_path):
    with pytest.raises(ConfigError):
        parse_config({**BASE, "tickers": ["A"]}, tmp_path, require_data=False)


def test_derived_seeds_differ_by_purpose(tmp_path):
    cfg = load_config(setup_run(tmp_path))
    seeds = {cfg.derived_seed(i) for i in range(4)}
    assert len(seeds) == 4
    assert cfg.derived_seed(1) == load_config(tmp_path / "cfg.json").derived_seed(1)


def test_bad_subcommand_exit_2():
    assert run_command(["fly"]) == 2


# -- granger ------------------------------------------------------------------------


def test_granger_panel_prints_matrix_and_target(tmp_path, capsys):
    path = setup_run(tmp_path, T=400)
    assert run_command(["ingest", "--config", str(path)]) == 0
    capsys.readouterr()
    out_csv = tmp_path / "g" / "granger.csv"
    assert run_command(["granger", "--panel", str(tmp_path / "run" / "panel.csv"), "--lag", "4", "--out", str(out_csv)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == ",A,B,C,row_sum"
    assert len(lines) == 5
    assert lines[-1] == "selected_target,C"
    assert out_csv.read_text().strip().splitlines() == lines
    assert (tmp_path / "g" / "manifest_granger.json").exists()


def test_granger_missing_panel_exit_2(tmp_path):
    assert run_command(["granger", "--panel", str(tmp_path / "nope.csv")]) == 2


# -- full pipeline ------------------------------------------------------------------


def test_pipeline_and_manifests(tmp_path, capsys):
    path = setup_run(tmp_path)
    for sub in ("ingest", "train", "backtest", "report"):
        assert run_command([sub, "--config", str(path)]) == 0, sub
    run = tmp_path / "run"
    for name in ("panel.csv", "stockformer.ckpt", "lstm.ckpt", "train_log.csv", "grad_norms.csv",
                 "comparison_val.csv", "comparison_test.csv", "curve_test_zeros.csv", "target.txt"):
        assert (run / name).exists(), name
    assert (run / "target.txt").read_text().strip() in {"A", "B", "C"}
    for sub in ("ingest", "train", "backtest", "report"):
        manifest = json.loads((run / f"manifest_{sub}.json").read_text())
        assert set(manifest) == {"subcommand", "config_sha256", "version", "seed"}
        assert manifest["seed"] == 11
    out = capsys.readouterr().out
    assert "stockformer" in out and "lstm" in out and "zeros" in out


def test_same_config_byte_identical_artifacts(tmp_path):
    def run(sub):
        d = tmp_path / sub
        d.mkdir()
        path = setup_run(d)
        for cmd in ("train", "backtest"):
            assert run_command([cmd, "--config", str(path)]) == 0
        return {p.relative_to(d / "run"): p.read_bytes() for p in sorted((d / "run").rglob("*")) if p.is_file()}

    a, b = run("a"), run("b")
    assert a.keys() == b.keys()
    assert all(a[k] == b[k] for k in a)
    assert Path("stockformer.ckpt") in a and Path("curve_test_stockformer.csv") in a


def test_backtest_before_train_exit_2(tmp_path):
    assert run_command(["backtest", "--config", str(setup_run(tmp_path))]) == 2


def test_unwritable_output_exit_3(tmp_path):
    path = setup_run(tmp_path)
    (tmp_path / "run").write_text("a file, not a directory")
    assert run_command(["train", "--config", str(path)]) == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_abort_exit_3(tmp_path, capsys):
    path = setup_run(tmp_path, train={"epochs": 2, "batch_size": 32, "initial_lr": 1e300})
    assert run_command(["train", "--config", str(path)]) == 3
    assert "step" in capsys.readouterr().err


# -- ingest over HTTP ---------------------------------------------------------------


def test_ingest_http_reads_token_from_env(tmp_path, monkeypatch):
    pages = []
    for k in range(2):
        pages.append((200, [_js(T0 + i * 3600, 10.0 + k, 10.5 + k) for i in range(12)]))
    with _Server(pages) as srv:
        cfg = {**BASE, "tickers": ["A", "B"], "target": "A",
               "data": {"bars_csv": "cache/bars.csv",
                        "http": {"base_url": srv.url, "token_env": "BARS_TOKEN", "from": T0, "to": T0 + 11 * 3600}}}
        (tmp_path / "cfg.json").write_text(json.dumps(cfg))
        monkeypatch.setenv("BARS_TOKEN", "s3cret")
        assert run_command(["ingest", "--config", str(tmp_path / "cfg.json")]) == 0
    assert srv.requests[0][1]["Authorization"] == "Bearer s3cret"
    assert (tmp_path / "cache" / "bars.csv").exists()
    assert "s3cret" not in (tmp_path / "cache" / "bars.csv").read_text()
    assert len((tmp_path / "run" / "panel.csv").read_text().splitlines()) == 13


def test_ingest_http_missing_token_exit_2(tmp_path, monkeypatch):
    monkeypatch.delenv("BARS_TOKEN", raising=False)
    cfg = {**BASE, "data": {"bars_csv": "bars.csv",
                            "http": {"base_url": "http://127.0.0.1:9", "token_env": "BARS_TOKEN", "from": 0, "to": 1}}}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert run_command(["ingest", "--config", str(tmp_path / "cfg.json")]) == 2


# -- selftest ------------------------------------------------------------------------


def test_selftest_subprocess_exit_0():
    proc = subprocess.run([sys.executable, "-m", "stockformer.cli", "selftest"], capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert "FAIL" not in proc.stdout
    assert "probsparse oracle" in proc.stdout
