"""LSTM baseline with the same window-in, scalar-out contract as Stockformer."""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields

import numpy as np

from ..errors import ConfigError, ShapeError
from ..tensor import Tensor, add, getitem, linear, matmul, mul, reshape, sigmoid, tanh, zeros

GATES = ("i", "f", "o", "g")


@dataclass(frozen=True)
class LSTMBaselineConfig:
    n: int
    s_in: int
    hidden_size: int = 32
    num_layers: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.hidden_size < 1:
            raise ConfigError("hidden_size must be >= 1")
        if self.num_layers < 1:
            raise ConfigError("num_layers must be >= 1")
        if self.n < 1 or self.s_in < 1:
            raise ConfigError("n and s_in must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LSTMBaselineConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown lstm config keys: {sorted(unknown)}")
        return cls(**d)


class LSTMModel:
    kind = "lstm"

    def __init__(self, config: LSTMBaselineConfig, params: "OrderedDict[str, Tensor] | None" = None):
        self.config = config
        self.params = params if params is not None else self._init_params()

    def _init_params(self):
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        Hs = cfg.hidden_size
        bound = 1.0 / math.sqrt(Hs)
        p: OrderedDict[str, Tensor] = OrderedDict()
        for layer in range(cfg.num_layers):
            d_in = cfg.s_in if layer == 0 else Hs
            for g in GATES:
                pre = f"lstm.{layer}.{g}."
                p[pre + "wx"] = Tensor(rng.uniform(-bound, bound, (d_in, Hs)), requires_grad=True)
                p[pre + "wh"] = Tensor(rng.uniform(-bound, bound, (Hs, Hs)), requires_grad=True)
                p[pre + "b"] = Tensor(np.zeros(Hs), requires_grad=True)
        p["head.w"] = Tensor(rng.uniform(-bound, bound, (Hs, 1)), requires_grad=True)
        p["head.b"] = Tensor(np.zeros(1), requires_grad=True)
        return p

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def cell(self, x_t: Tensor, h: Tensor, c: Tensor, layer: int) -> tuple[Tensor, Tensor]:
        """One step: returns the new (hidden, cell) pair, each ``[B, hidden]``."""
        P = self.params

        def pre_act(g):
            pre = f"lstm.{layer}.{g}."
            return add(linear(x_t, P[pre + "wx"], P[pre + "b"]), matmul(h, P[pre + "wh"]))

        i = sigmoid(pre_act("i"))
        f = sigmoid(pre_act("f"))
        o = sigmoid(pre_act("o"))
        g = tanh(pre_act("g"))
        c = add(mul(f, c), mul(i, g))
        h = mul(o, tanh(c))
        return h, c

    def run(self, windows: Tensor) -> list[Tensor]:
        """Hidden state of the top layer after each time step."""
        B, n, s = windows.shape
        if (n, s) != (self.config.n, self.config.s_in):
            raise ShapeError(f"window shape {(n, s)} does not match config {(self.config.n, self.config.s_in)}")
        Hs = self.config.hidden_size
        hs = [zeros((B, Hs)) for _ in range(self.config.num_layers)]
        cs = [zeros((B, Hs)) for _ in range(self.config.num_layers)]
        top = []
        for t in range(n):
            inp = getitem(windows, (slice(None), t, slice(None)))
            for layer in range(self.config.num_layers):
                hs[layer], cs[layer] = self.cell(inp, hs[layer], cs[layer], layer)
                inp = hs[layer]
            top.append(inp)
        return top

    def forward(self, windows, train: bool = False, rng=None) -> Tensor:
        windows = windows if isinstance(windows, Tensor) else Tensor(windows)
        if windows.ndim == 2:
            windows = reshape(windows, (1,) + windows.shape)
        if windows.ndim != 3:
            raise ShapeError(f"expected [n, s_in] or [B, n, s_in], got {windows.shape}")
        h_last = self.run(windows)[-1]
        out = linear(h_last, self.params["head.w"], self.params["head.b"])
        return reshape(out, (windows.shape[0],))

    __call__ = forward


def lstm_forward(window, model: LSTMModel) -> Tensor:
    return model.forward(window)
