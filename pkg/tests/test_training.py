import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stockformer import tensor as T
from stockformer.backtest import StrategyKind, run_strategy
from stockformer.data import WindowedDataset
from stockformer.errors import BankruptcyError, ConfigError, DataError, TrainingAborted
from stockformer.model import LSTMBaselineConfig, LSTMModel, ModelConfig, StockformerModel, checkpoint_bytes
from stockformer.training import (
    Adam,
    Handcrafted,
    Multiplicative,
    ReduceOnPlateau,
    SchedulerSpec,
    TrainConfig,
    compute_loss,
    loss_pointwise,
    loss_stock_tanh,
    metric_stock_direction,
    scheduler_step,
    train_loop,
)


def dataset(N, n=8, s_in=2, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((N, n, s_in)) * scale
    y = 0.5 * X[:, -1, 0] + 0.01 * rng.standard_normal(N) * scale
    ts = 3600 * np.arange(N, dtype=np.int64) + 3600 * n
    return WindowedDataset(X, y, ts, ts - 3600, n, "percent", [f"S{i}" for i in range(s_in)], "S0")


def small_model(seed=0, n=8, s_in=2, **kw):
    cfg = dict(n=n, s_in=s_in, d_model=8, n_heads=2, n_layers=1, d_ff=16, dropout=0.0, seed=seed)
    cfg.update(kw)
    return StockformerModel(ModelConfig(**cfg))


# -- losses ---------------------------------------------------------------------


def test_pointwise_examples():
    assert loss_pointwise("mse", T.Tensor([0.0]), [2.0]).item() == 4.0
    assert loss_pointwise("mae", T.Tensor([0.0]), [2.0]).item() == 2.0
    assert loss_pointwise("mse", T.Tensor([1.0, 2.0]), [1.0, 2.0]).item() == 0.0


def test_pointwise_shape_mismatch():
    with pytest.raises(DataError):
        loss_pointwise("mse", T.Tensor([1.0, 2.0]), [1.0])


def test_stock_tanh_zero_outputs():
    assert loss_stock_tanh(T.zeros((4,)), [0.01, -0.02, 0.03, 0.0]).item() == 0.0


def test_stock_tanh_saturated_limit():
    assert loss_stock_tanh(T.Tensor([40.0]), [0.01]).item() == pytest.approx(-math.log(1.01), abs=1e-15)
    assert -math.log(1.01) == pytest.approx(-0.00995, abs=1e-5)


def test_stock_tanh_gradient_at_zero():
    o = T.Tensor([0.0, 0.0], requires_grad=True)
    pct = np.array([0.013, -0.021])
    T.backward(loss_stock_tanh(o, pct))
    np.testing.assert_allclose(o.grad.data, -pct, rtol=1e-15)


def test_stock_tanh_rejects_total_loss():
    with pytest.raises(DataError):
        loss_stock_tanh(T.Tensor([0.1]), [-1.0])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 40))
def test_stock_tanh_is_negative_log_backtest_return(seed, N):
    rng = np.random.default_rng(seed)
    out, pct = rng.normal(0, 2, N), rng.normal(0, 0.05, N)
    rep, _ = run_strategy(out, pct, StrategyKind.tanh())
    loss = loss_stock_tanh(T.Tensor(out), pct).item()
    assert abs(loss - (-math.log(1.0 + rep.roi))) <= 1e-12


def test_direction_metric_examples():
    assert metric_stock_direction([0.5, -0.3], [0.01, -0.02]) == pytest.approx(1.01 * 1.02 - 1, abs=1e-15)
    assert metric_stock_direction([0.5, -0.3], [0.01, -0.02], threshold=0.4) == pytest.approx(0.01, abs=1e-15)
    assert metric_stock_direction([0.0, 0.0], [0.05, -0.05]) == 0.0


def test_direction_metric_bankruptcy():
    with pytest.raises(BankruptcyError):
        metric_stock_direction([-1.0], [1.5])


def test_compute_loss_dispatch():
    p = T.Tensor([0.2])
    assert compute_loss("mse", p, [0.0], [0.0]).item() == pytest.approx(0.04)
    assert compute_loss("stock_tanh", p, [0.0], [0.01]).item() == pytest.approx(-math.log1p(math.tanh(0.2) * 0.01))


# -- Adam -------------------------------------------------------------------------


def test_adam_zero_gradient_cold_start_no_move():
    p = T.Tensor([1.0, -2.0], requires_grad=True)
    p.grad = T.zeros((2,))
    Adam([p], lr=0.1).step()
    assert p.data.tolist() == [1.0, -2.0]


def test_adam_first_step_is_lr_times_sign():
    p = T.Tensor([1.0, 1.0], requires_grad=True)
    p.grad = T.Tensor([3.0, -0.5])
    Adam([p], lr=0.01, eps=0.0).step()
    np.testing.assert_allclose(p.data, [0.99, 1.01], rtol=1e-14)


def test_adam_matches_reference_recursion():
    rng = np.random.default_rng(0)
    p = T.Tensor(rng.standard_normal(3), requires_grad=True)
    ref = p.data.copy()
    opt = Adam([p], lr=0.05)
    m = v = np.zeros(3)
    for t in range(1, 6):
        g = rng.standard_normal(3)
        p.grad = T.Tensor(g)
        opt.step()
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.05 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(p.data, ref, rtol=1e-13)


# -- schedulers --------------------------------------------------------------------


def test_multiplicative_exact():
    s = Multiplicative(1e-6, 0.95)
    lrs = [scheduler_step(s, e, 1.0) for e in range(1, 4)]
    assert lrs[-1] == pytest.approx(1e-6 * 0.857375, rel=1e-15)
    assert lrs == [1e-6 * 0.95**k for k in (1, 2, 3)]


def test_plateau_fires_after_patience():
    s = ReduceOnPlateau(1.0, factor=0.5, patience=2)
    lrs = [s.step(e, 1.0) for e in (1, 2, 3)]
    assert lrs == [1.0, 1.0, 0.5]
    assert s.reductions == [3]


def test_plateau_resets_on_improvement():
    s = ReduceOnPlateau(1.0, factor=0.5, patience=2)
    for e, loss in enumerate([1.0, 1.1, 0.9, 1.0, 1.0], start=1):
        s.step(e, loss)
    assert s.reductions == [5]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=1, max_size=40), st.integers(1, 5), st.floats(0.05, 0.95))
def test_plateau_monotone_and_floored(losses, patience, factor):
    s = ReduceOnPlateau(1e-3, factor=factor, patience=patience, min_lr=1e-5)
    prev = s.lr
    for e, loss in enumerate(losses, start=1):
        lr = s.step(e, loss)
        assert lr <= prev and lr >= 1e-5
        prev = lr


def test_handcrafted_table():
    s = Handcrafted(1e-4, {10: 1e-5, 20: 1e-6})
    assert [s.step(e) for e in (1, 9)] == [1e-4, 1e-4]
    assert s.step(10) == 1e-5
    assert s.step(19) == 1e-5
    assert s.step(25) == 1e-6


def test_scheduler_spec_builds_each_kind():
    assert isinstance(SchedulerSpec("handcrafted", {"3": 0.1}).build(1.0), Handcrafted)
    assert isinstance(SchedulerSpec("multiplicative").build(1.0), Multiplicative)
    assert isinstance(SchedulerSpec().build(1.0), ReduceOnPlateau)
    with pytest.raises(ValueError):
        SchedulerSpec("cosine").build(1.0)


# -- train loop ----------------------------------------------------------------------


def test_grad_norm_log_length():
    tr, va = dataset(20, seed=0), dataset(8, seed=1)
    cfg = TrainConfig(epochs=3, batch_size=6, initial_lr=1e-3, halt_on_gridlock=False)
    _, log = train_loop(small_model(), tr, va, cfg)
    assert len(log.grad_norms) == math.ceil(20 / 6) * 3
    assert [s for s, _ in log.grad_norms] == list(range(1, 13))
    assert [r.epoch for r in log.epochs] == [1, 2, 3]


def test_training_reduces_loss():
    tr, va = dataset(64, seed=0), dataset(32, seed=1)
    cfg = TrainConfig(epochs=15, batch_size=16, initial_lr=3e-3)
    _, log = train_loop(small_model(), tr, va, cfg)
    assert log.best_val_loss < 0.5 * log.epochs[0].val_loss


def test_restore_best_keeps_best_checkpoint(tmp_path):
    tr, va = dataset(32, seed=0), dataset(16, seed=1)
    cfg = TrainConfig(epochs=6, batch_size=8, initial_lr=5e-2)
    model, log = train_loop(small_model(), tr, va, cfg, checkpoint_path=tmp_path / "best.ckpt")
    assert (tmp_path / "best.ckpt").read_bytes() == checkpoint_bytes(model)
    assert log.best_val_loss == min(r.val_loss for r in log.epochs)


def test_nan_aborts_with_step():
    tr, va = dataset(16), dataset(8, seed=1)
    tr.inputs[5, 2, 1] = np.inf
    with pytest.raises(TrainingAborted) as exc:
        train_loop(small_model(), tr, va, TrainConfig(epochs=2, batch_size=4, initial_lr=1e-3))
    assert exc.value.step == 2
    assert "step 2" in str(exc.value)


def test_training_deterministic(tmp_path):
    tr, va = dataset(24), dataset(8, seed=1)
    cfg = TrainConfig(epochs=3, batch_size=8, initial_lr=1e-3, shuffle=True, seed=5)

    def run(d):
        m, log = train_loop(small_model(dropout=0.1), tr, va, cfg)
        log.write(d)
        return checkpoint_bytes(m), (d / "train_log.csv").read_bytes(), (d / "grad_norms.csv").read_bytes()

    assert run(tmp_path / "a") == run(tmp_path / "b")


def test_lstm_trains_through_same_loop():
    tr, va = dataset(32), dataset(8, seed=1)
    m = LSTMModel(LSTMBaselineConfig(n=8, s_in=2, hidden_size=4))
    _, log = train_loop(m, tr, va, TrainConfig(epochs=5, batch_size=8, initial_lr=1e-2))
    assert log.best_val_loss < log.epochs[0].train_loss


def test_empty_splits_rejected():
    with pytest.raises(DataError):
        train_loop(small_model(), dataset(4).subset(0, 0), dataset(4), TrainConfig())


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(loss="stock_direction")
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"epochs": 2, "momentum": 0.9})
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"scheduler": {"kind": "plateau", "cooldown": 2}})
    cfg = TrainConfig.from_dict({"scheduler": {"kind": "multiplicative", "gamma": 0.9}})
    assert cfg.scheduler.gamma == 0.9
