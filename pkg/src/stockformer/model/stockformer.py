"""Encoder-only Stockformer: conv token embedding, positional encoding,
full/ProbSparse attention layers with distilling, mean-pool + linear head."""

from __future__ import annotations

import math
import warnings
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields

import numpy as np

from ..errors import ConfigError, ShapeError
from ..functional import conv1d_circular, dropout, layer_norm, max_pool1d
from ..tensor import Tensor, add, gelu, linear, mean, mul_vector, reshape, scale, transpose
from .attention import AttentionOutput, full_attention, probsparse_attention

ATTENTION_KINDS = ("full", "probsparse")


@dataclass(frozen=True)
class ModelConfig:
    n: int
    s_in: int
    d_model: int = 32
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 64
    attention: str = "probsparse"
    sampling_factor: int = 5
    dropout: float = 0.05
    seed: int = 0
    dtype: str = "float64"
    # fixed (non-trained) standardization: inputs are divided per channel by
    # input_scale, the head output is multiplied by output_scale
    input_scale: tuple | None = None
    output_scale: float = 1.0

    def __post_init__(self):
        if self.input_scale is not None:
            object.__setattr__(self, "input_scale", tuple(float(v) for v in self.input_scale))
            if len(self.input_scale) != self.s_in or any(v <= 0 for v in self.input_scale):
                raise ConfigError("input_scale needs s_in positive entries")
        if self.output_scale <= 0:
            raise ConfigError("output_scale must be positive")
        if self.n < 1 or self.s_in < 1:
            raise ConfigError("n and s_in must be >= 1")
        if self.d_model < 1 or self.n_heads < 1 or self.d_ff < 1:
            raise ConfigError("d_model, n_heads and d_ff must be >= 1")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.n_layers < 1:
            raise ConfigError("n_layers must be >= 1")
        if self.attention not in ATTENTION_KINDS:
            raise ConfigError(f"attention must be one of {ATTENTION_KINDS}")
        if self.sampling_factor < 1:
            raise ConfigError("sampling_factor must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError("dtype must be float64 or float32")
        if self.d_model // self.n_heads < 4:
            warnings.warn(
                f"head width d_model/n_heads = {self.d_model // self.n_heads} is below 4", stacklevel=3
            )

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def encoder_lengths(self) -> list[int]:
        """Sequence length entering each layer, plus the final length."""
        lengths = [self.n]
        for _ in range(self.n_layers):
            L = lengths[-1]
            lengths.append((L + 1) // 2 if L >= 2 else L)
        return lengths

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["input_scale"] is not None:
            d["input_scale"] = list(d["input_scale"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def _xavier(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    """Fixed sinusoidal table: sin on even channels, cos on odd ones."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i2 = np.arange(0, d_model, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i2 / d_model)
    pe = np.zeros((length, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return pe


def positional_encode(x: Tensor) -> Tensor:
    L, d = x.shape[-2], x.shape[-1]
    pe = np.broadcast_to(positional_encoding(L, d).astype(x.dtype), x.shape)
    return add(x, Tensor(pe, dtype=x.dtype))


def distill(x: Tensor) -> Tensor:
    """Halve the time axis with a stride-2 max-pool; skipped when L < 2."""
    if x.shape[-2] < 2:
        warnings.warn("sequence length 1 cannot be distilled further; skipping", stacklevel=2)
        return x
    return max_pool1d(x)


class StockformerModel:
    """Parameters plus forward pass.  All parameters require grad."""

    kind = "stockformer"

    def __init__(self, config: ModelConfig, params: "OrderedDict[str, Tensor] | None" = None):
        self.config = config
        self.params = params if params is not None else self._init_params()

    def _init_params(self) -> "OrderedDict[str, Tensor]":
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        dt = np.dtype(cfg.dtype)
        E, F = cfg.d_model, cfg.d_ff
        p: OrderedDict[str, Tensor] = OrderedDict()

        def put(name, arr):
            p[name] = Tensor(np.asarray(arr, dtype=dt), requires_grad=True)

        put("embed.kernel", _xavier(rng, (E, cfg.s_in, 3), cfg.s_in * 3, E * 3))
        for layer in range(cfg.n_layers):
            pre = f"layers.{layer}."
            for w in ("wq", "wk", "wv", "wo"):
                put(pre + w, _xavier(rng, (E, E), E, E))
            put(pre + "bo", np.zeros(E))
            put(pre + "ln1.gamma", np.ones(E))
            put(pre + "ln1.beta", np.zeros(E))
            put(pre + "ff1.w", _xavier(rng, (E, F), E, F))
            put(pre + "ff1.b", np.zeros(F))
            put(pre + "ff2.w", _xavier(rng, (F, E), F, E))
            put(pre + "ff2.b", np.zeros(E))
            put(pre + "ln2.gamma", np.ones(E))
            put(pre + "ln2.beta", np.zeros(E))
        put("head.w", _xavier(rng, (E, 1), E, 1))
        put("head.b", np.zeros(1))
        return p

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(t.size for t in self.params.values())

    # -- forward pieces ---------------------------------------------------

    def token_embed(self, window: Tensor) -> Tensor:
        if window.shape[-2:] != (self.config.n, self.config.s_in):
            raise ShapeError(
                f"window shape {window.shape} does not end with (n={self.config.n}, s_in={self.config.s_in})"
            )
        return conv1d_circular(window, self.params["embed.kernel"])

    def _split_heads(self, x: Tensor) -> Tensor:
        B, L, _ = x.shape
        H, dh = self.config.n_heads, self.config.d_head
        return transpose(reshape(x, (B, L, H, dh)), (0, 2, 1, 3))

    def _merge_heads(self, x: Tensor) -> Tensor:
        B, H, L, dh = x.shape
        return reshape(transpose(x, (0, 2, 1, 3)), (B, L, H * dh))

    def attention(self, x: Tensor, layer: int, rng: np.random.Generator) -> AttentionOutput:
        pre = f"layers.{layer}."
        P = self.params
        q = self._split_heads(linear(x, P[pre + "wq"]))
        k = self._split_heads(linear(x, P[pre + "wk"]))
        v = self._split_heads(linear(x, P[pre + "wv"]))
        if self.config.attention == "full":
            out = full_attention(q, k, v)
        else:
            out = probsparse_attention(q, k, v, self.config.sampling_factor, rng)
        merged = linear(self._merge_heads(out.values), P[pre + "wo"], P[pre + "bo"])
        return AttentionOutput(merged, out.selected_query_indices)

    def encoder_layer(self, x: Tensor, layer: int, train: bool, rng: np.random.Generator) -> Tensor:
        pre = f"layers.{layer}."
        P = self.params
        p_drop = self.config.dropout
        attn = self.attention(x, layer, rng).values
        x = layer_norm(add(x, dropout(attn, p_drop, rng, train)), P[pre + "ln1.gamma"], P[pre + "ln1.beta"])
        hidden = gelu(linear(x, P[pre + "ff1.w"], P[pre + "ff1.b"]))
        ff = linear(hidden, P[pre + "ff2.w"], P[pre + "ff2.b"])
        x = layer_norm(add(x, dropout(ff, p_drop, rng, train)), P[pre + "ln2.gamma"], P[pre + "ln2.beta"])
        return distill(x)

    def encode(self, windows: Tensor, train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """Embedding + encoder stack; returns ``[B, ceil(n/2^J), d_model]``."""
        if rng is None:
            if train and self.config.dropout > 0:
                raise ValueError("train-mode forward with dropout needs an rng")
            rng = np.random.default_rng(self.config.seed)
        if self.config.input_scale is not None:
            inv = Tensor(1.0 / np.asarray(self.config.input_scale), dtype=windows.dtype)
            windows = mul_vector(windows, inv)
        x = positional_encode(self.token_embed(windows))
        for layer in range(self.config.n_layers):
            x = self.encoder_layer(x, layer, train, rng)
        return x

    def forward(self, windows, train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """Predict the next-hour target return.

        ``windows`` is ``[n, s_in]`` (returns a 1-element tensor) or
        ``[B, n, s_in]`` (returns ``[B]``).  Without an explicit ``rng`` the
        ProbSparse key sample is drawn from a generator seeded by the config,
        so evaluation is deterministic.
        """
        windows = windows if isinstance(windows, Tensor) else Tensor(windows, dtype=np.dtype(self.config.dtype))
        single = windows.ndim == 2
        if single:
            windows = reshape(windows, (1,) + windows.shape)
        if windows.ndim != 3:
            raise ShapeError(f"expected [n, s_in] or [B, n, s_in], got {windows.shape}")
        encoded = self.encode(windows, train, rng)
        pooled = mean(encoded, axis=1)
        out = linear(pooled, self.params["head.w"], self.params["head.b"])
        if self.config.output_scale != 1.0:
            out = scale(out, self.config.output_scale)
        return reshape(out, (windows.shape[0],))

    __call__ = forward


def stockformer_forward(window, model: StockformerModel, train_mode: bool = False, rng=None) -> Tensor:
    return model.forward(window, train_mode, rng)
