"""Mini-batch training with gradient-norm monitoring and best-val checkpoints."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ..data import WindowedDataset
from ..errors import ConfigError, DataError, NonFiniteError, TrainingAborted
from ..model.checkpoint import checkpoint_bytes, load_checkpoint_bytes
from ..tensor import Tensor, backward, no_grad, parameters_grad_l2
from .losses import LOSS_KINDS, compute_loss
from .optim import Adam
from .schedulers import SchedulerSpec

logger = logging.getLogger(__name__)

GRIDLOCK_THRESHOLD = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    initial_lr: float = 1e-6
    seed: int = 0
    loss: str = "mse"
    scheduler: SchedulerSpec = field(default_factory=SchedulerSpec)
    grad_norm_log: bool = True
    shuffle: bool = False
    halt_on_gridlock: bool = True
    restore_best: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.initial_lr <= 0:
            raise ConfigError("initial_lr must be positive")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"loss must be one of {LOSS_KINDS}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        if isinstance(d.get("scheduler"), dict):
            sched = d["scheduler"]
            bad = set(sched) - {f.name for f in fields(SchedulerSpec)}
            if bad:
                raise ConfigError(f"unknown scheduler keys: {sorted(bad)}")
            d["scheduler"] = SchedulerSpec(**sched)
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    mean_grad_l2: float
    gridlock: bool


@dataclass
class TrainLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    grad_norms: list[tuple[int, float]] = field(default_factory=list)
    best_epoch: int | None = None
    best_val_loss: float = math.inf

    @property
    def gridlock_epochs(self) -> list[int]:
        return [r.epoch for r in self.epochs if r.gridlock]

    def write(self, directory) -> None:
        """``train_log.csv`` (epoch,train_loss,val_loss,lr) and ``grad_norms.csv`` (step,grad_l2)."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "train_log.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss", "lr"])
            for r in self.epochs:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.lr)])
        with open(d / "grad_norms.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "grad_l2"])
            for step, g in self.grad_norms:
                w.writerow([step, repr(g)])


def _batches(n: int, batch_size: int, order: np.ndarray | None = None):
    idx = np.arange(n) if order is None else order
    for start in range(0, n, batch_size):
        yield idx[start : start + batch_size]


def predict(model, dataset: WindowedDataset, batch_size: int = 256) -> np.ndarray:
    """Eval-mode predictions for every sample, in order."""
    out = []
    with no_grad():
        for b in _batches(len(dataset), batch_size):
            out.append(model.forward(Tensor(dataset.inputs[b]), train=False).data)
    return np.concatenate(out) if out else np.zeros(0)


def evaluate_loss(model, dataset: WindowedDataset, kind: str, batch_size: int = 256) -> float:
    preds = predict(model, dataset, batch_size)
    with no_grad():
        value = compute_loss(kind, Tensor(preds), dataset.targets, dataset.target_pct()).item()
    return value


def train_loop(
    model,
    train: WindowedDataset,
    val: WindowedDataset,
    config: TrainConfig,
    checkpoint_path=None,
) -> tuple[object, TrainLog]:
    """Adam training over chronological mini-batches.

    Per epoch: forward, loss, backward, grad-norm record, Adam step for each
    batch, then validation loss, scheduler step and a best-validation
    checkpoint.  A non-finite loss or gradient raises ``TrainingAborted``
    naming the global step.  An epoch whose mean gradient L2 norm falls
    below 1e-12 is flagged as gridlocked (and ends the run if
    ``halt_on_gridlock``).
    """
    if len(train) == 0 or len(val) == 0:
        raise DataError("train and validation sets must be non-empty")
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    opt = Adam(params, config.initial_lr)
    scheduler = config.scheduler.build(config.initial_lr)
    log = TrainLog()
    best_blob = None
    step = 0
    train_pct = train.target_pct()
    pointwise = config.loss != "stock_tanh"

    for epoch in range(1, config.epochs + 1):
        lr = opt.lr
        order = rng.permutation(len(train)) if config.shuffle else None
        total, weight, norms = 0.0, 0, []
        for b in _batches(len(train), config.batch_size, order):
            step += 1
            opt.zero_grad()
            try:
                preds = model.forward(Tensor(train.inputs[b]), train=True, rng=rng)
                loss = compute_loss(config.loss, preds, train.targets[b], train_pct[b])
                value = loss.item()
                if not math.isfinite(value):
                    raise NonFiniteError("loss is not finite")
                backward(loss)
            except NonFiniteError as exc:
                raise TrainingAborted(f"epoch {epoch}, step {step}: {exc}", step) from exc
            gnorm = parameters_grad_l2(params)
            if not math.isfinite(gnorm):
                raise TrainingAborted(f"epoch {epoch}, step {step}: gradient norm is not finite", step)
            norms.append(gnorm)
            if config.grad_norm_log:
                log.grad_norms.append((step, gnorm))
            opt.step()
            if pointwise:
                total += value * len(b)
                weight += len(b)
            else:
                total += value
        train_loss = total / weight if pointwise else total
        try:
            val_loss = evaluate_loss(model, val, config.loss)
        except NonFiniteError as exc:
            raise TrainingAborted(f"epoch {epoch}, validation: {exc}", step) from exc
        mean_norm = float(np.mean(norms))
        gridlock = mean_norm < GRIDLOCK_THRESHOLD
        log.epochs.append(EpochRecord(epoch, train_loss, val_loss, lr, mean_norm, gridlock))
        if val_loss < log.best_val_loss:
            log.best_val_loss = val_loss
            log.best_epoch = epoch
            best_blob = checkpoint_bytes(model)
            if checkpoint_path is not None:
                Path(checkpoint_path).write_bytes(best_blob)
        opt.lr = scheduler.step(epoch, val_loss)
        if gridlock:
            logger.warning("epoch %d: mean gradient L2 %.3g below %.0e (gridlock)", epoch, mean_norm, GRIDLOCK_THRESHOLD)
            if config.halt_on_gridlock:
                break

    if config.restore_best and best_blob is not None:
        model = load_checkpoint_bytes(best_blob)
    return model, log
