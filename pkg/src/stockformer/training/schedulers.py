"""Learning-rate schedulers driven once per completed epoch.

``step(epoch, val_loss)`` is called after epoch ``epoch`` (1-based count of
completed epochs) and returns the learning rate for the following epoch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


class Handcrafted:
    """Jump to preset rates once given epoch counts are reached."""

    def __init__(self, initial_lr: float, milestones: dict[int, float]):
        if initial_lr <= 0 or any(lr <= 0 for lr in milestones.values()):
            raise ValueError("learning rates must be positive")
        self.initial_lr = initial_lr
        self.milestones = dict(sorted((int(k), float(v)) for k, v in milestones.items()))
        self.lr = initial_lr

    def lr_at(self, epoch: int) -> float:
        lr = self.initial_lr
        for at, value in self.milestones.items():
            if epoch >= at:
                lr = value
        return lr

    def step(self, epoch: int, val_loss: float | None = None) -> float:
        self.lr = self.lr_at(epoch)
        return self.lr


class Multiplicative:
    """``lr = initial_lr * gamma**epochs``."""

    def __init__(self, initial_lr: float, gamma: float):
        if initial_lr <= 0:
            raise ValueError("initial_lr must be positive")
        if not 0.0 < gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        self.initial_lr = initial_lr
        self.gamma = gamma
        self.epochs = 0
        self.lr = initial_lr

    def step(self, epoch: int | None = None, val_loss: float | None = None) -> float:
        self.epochs += 1
        self.lr = self.initial_lr * self.gamma**self.epochs
        return self.lr


class ReduceOnPlateau:
    """Cut the rate by ``factor`` after ``patience`` epochs without improvement.

    An epoch improves when its loss is below ``best - min_delta``.  The
    counter resets after every reduction.
    """

    def __init__(self, initial_lr: float, factor: float = 0.5, patience: int = 3, min_delta: float = 0.0, min_lr: float = 1e-12):
        if initial_lr <= 0 or min_lr <= 0:
            raise ValueError("learning rates must be positive")
        if not 0.0 < factor < 1.0:
            raise ValueError("factor must be in (0, 1)")
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.lr = initial_lr
        self.factor = factor
        self.patience = patience
        self.min_delta = min_delta
        self.min_lr = min_lr
        self.best = math.inf
        self.bad_epochs = 0
        self.reductions: list[int] = []

    def step(self, epoch: int, val_loss: float) -> float:
        if val_loss < self.best - self.min_delta:
            self.best = val_loss
            self.bad_epochs = 0
            return self.lr
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            self.lr = max(self.lr * self.factor, self.min_lr)
            self.bad_epochs = 0
            self.reductions.append(epoch)
        return self.lr


@dataclass(frozen=True)
class SchedulerSpec:
    """Serializable scheduler choice: ``handcrafted``, ``multiplicative`` or ``plateau``."""

    kind: str = "plateau"
    milestones: dict = field(default_factory=dict)
    gamma: float = 0.95
    factor: float = 0.5
    patience: int = 3
    min_delta: float = 0.0
    min_lr: float = 1e-12

    def build(self, initial_lr: float):
        if self.kind == "handcrafted":
            return Handcrafted(initial_lr, {int(k): v for k, v in self.milestones.items()})
        if self.kind == "multiplicative":
            return Multiplicative(initial_lr, self.gamma)
        if self.kind == "plateau":
            return ReduceOnPlateau(initial_lr, self.factor, self.patience, self.min_delta, self.min_lr)
        raise ValueError(f"unknown scheduler kind {self.kind!r}")


def scheduler_step(scheduler, epoch: int, validation_loss: float) -> float:
    return scheduler.step(epoch, validation_loss)
