"""Built-in correctness checks run by ``stockformer selftest``."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import functional as F
from . import tensor as T
from .gradcheck import check_gradients
from .model.attention import full_attention, probsparse_attention
from .model.stockformer import ModelConfig, StockformerModel
from .training.losses import loss_stock_tanh

GRAD_TOL = 1e-4
ORACLE_TOL = 1e-8


# layer_norm affine for the 5-wide chain probe
_g5 = T.Tensor(np.linspace(0.5, 1.5, 5))
_b5 = T.Tensor(np.linspace(-0.2, 0.2, 5))


def _rand(rng, shape, lo=-2.0, hi=2.0, requires_grad=True):
    return T.Tensor(rng.uniform(lo, hi, shape), requires_grad=requires_grad)


def op_gradient_cases(seed: int = 0) -> dict[str, tuple[Callable[[], T.Tensor], list[T.Tensor]]]:
    """One scalar-valued probe per differentiable primitive."""
    rng = np.random.default_rng(seed)
    w = T.Tensor(rng.standard_normal((3, 4)))  # fixed projection for a scalar readout
    a, b = _rand(rng, (3, 4)), _rand(rng, (3, 4))
    pos = _rand(rng, (3, 4), 0.5, 2.0)
    m1, m2 = _rand(rng, (2, 3, 4)), _rand(rng, (2, 4, 5))
    x_seq, kern = _rand(rng, (2, 7, 3)), _rand(rng, (4, 3, 3))
    gam, bet = _rand(rng, (4,)), _rand(rng, (4,))
    bias = _rand(rng, (4,))
    pool_in = _rand(rng, (2, 9, 3))
    read = lambda t: T.sum_(T.mul(t, w))
    # abs is probed away from its kink at 0
    off_zero = T.Tensor(np.sign(a.data) * (np.abs(a.data) + 0.1), requires_grad=True)
    vec = _rand(rng, (4,))
    rows_idx = np.array([[0, 2], [1, 2]])
    bias5 = _rand(rng, (5,))

    return {
        "add": (lambda: read(T.add(a, b)), [a, b]),
        "sub": (lambda: read(T.sub(a, b)), [a, b]),
        "mul": (lambda: read(T.mul(a, b)), [a, b]),
        "scale": (lambda: read(T.scale(a, -1.7)), [a]),
        "tanh": (lambda: read(T.tanh(a)), [a]),
        "exp": (lambda: read(T.exp(a)), [a]),
        "ln": (lambda: read(T.ln(pos)), [pos]),
        "gelu": (lambda: read(T.gelu(a)), [a]),
        "sigmoid": (lambda: read(T.sigmoid(a)), [a]),
        "add_bias": (lambda: read(T.add_bias(a, bias)), [a, bias]),
        "mul_vector": (lambda: read(T.mul_vector(a, vec)), [a, vec]),
        "neg": (lambda: read(T.neg(a)), [a]),
        "linear": (lambda: T.sum_(T.tanh(T.linear(m1, T.getitem(m2, 0), bias5))), [m1, m2, bias5]),
        # fresh generator with a fixed seed gives the same mask on every call
        "dropout": (lambda: read(F.dropout(a, 0.3, np.random.default_rng(5), True)), [a]),
        "abs": (lambda: read(T.abs_(off_zero)), [off_zero]),
        "sum_axis": (lambda: T.sum_(T.tanh(T.sum_(m1, axis=1))), [m1]),
        "mean_axis": (lambda: T.sum_(T.tanh(T.mean(m1, axis=-1, keepdims=True))), [m1]),
        "reshape_transpose": (lambda: T.sum_(T.tanh(T.transpose(T.reshape(m1, (4, 3, 2)), (2, 0, 1)))), [m1]),
        "getitem": (lambda: T.sum_(T.tanh(T.getitem(m2, (slice(None), 1)))), [m2]),
        "expand": (lambda: T.sum_(T.tanh(T.expand(T.getitem(m1, (slice(None), slice(0, 1))), (2, 3, 4)))), [m1]),
        "concat": (lambda: T.sum_(T.tanh(T.concat([a, b], axis=0))), [a, b]),
        "take_put_rows": (
            lambda: T.sum_(T.tanh(T.put_rows(m1, rows_idx, T.scale(T.take_rows(m1, rows_idx), 2.0)))),
            [m1],
        ),
        "matmul": (lambda: T.sum_(T.tanh(T.matmul(m1, m2))), [m1, m2]),
        "softmax": (lambda: read(F.softmax_last_axis(a)), [a]),
        "layer_norm": (lambda: read(F.layer_norm(a, gam, bet)), [a, gam, bet]),
        "conv1d_circular": (lambda: T.sum_(T.tanh(F.conv1d_circular(x_seq, kern))), [x_seq, kern]),
        "max_pool1d": (lambda: T.sum_(T.mul(F.max_pool1d(pool_in), F.max_pool1d(pool_in))), [pool_in]),
        "chain": (
            lambda: T.sum_(T.tanh(F.layer_norm(F.softmax_last_axis(T.matmul(m1, m2)), _g5, _b5))),
            [m1, m2],
        ),
    }


def composite_case(seed: int = 0, attention: str = "probsparse"):
    """Tiny Stockformer + StockTanh loss on a random batch."""
    cfg = ModelConfig(n=16, s_in=3, d_model=8, n_heads=2, n_layers=2, d_ff=16, dropout=0.0, attention=attention, seed=seed)
    model = StockformerModel(cfg)
    rng = np.random.default_rng(seed + 1)
    x = T.Tensor(rng.standard_normal((4, 16, 3)))
    pct = rng.normal(0.0, 0.02, 4)

    def fn():
        return loss_stock_tanh(model.forward(x, train=False), pct)

    return fn, model.parameters()


def probsparse_oracle(seeds: int = 100) -> tuple[float, bool]:
    """Max |probsparse - full| with a saturating factor, and the mean(V) check."""
    worst = 0.0
    mean_rows_exact = True
    for s in range(seeds):
        rng = np.random.default_rng(s)
        L, d = int(rng.integers(2, 40)), int(rng.integers(1, 9))
        q, k, v = (T.Tensor(rng.standard_normal((2, L, d))) for _ in range(3))
        full = full_attention(q, k, v).values.data
        sparse = probsparse_attention(q, k, v, c=L, rng=s).values.data
        worst = max(worst, float(np.max(np.abs(full - sparse))))

        small = probsparse_attention(q, k, v, c=1, rng=s)
        sel = small.selected_query_indices
        vmean = v.data.mean(axis=-2)
        for bi in range(2):
            others = np.setdiff1d(np.arange(L), sel[bi])
            if not np.array_equal(small.values.data[bi, others], np.broadcast_to(vmean[bi], (len(others), d))):
                mean_rows_exact = False
    return worst, mean_rows_exact


def run(print_fn=print) -> bool:
    ok = True
    for name, (fn, params) in op_gradient_cases().items():
        res = check_gradients(fn, params)
        passed = res.passed(GRAD_TOL)
        ok &= passed
        print_fn(f"{'PASS' if passed else 'FAIL'} gradient {name}: max rel err {res.max_rel_error:.2e}")
    for attention in ("probsparse", "full"):
        fn, params = composite_case(attention=attention)
        res = check_gradients(fn, params, max_entries=12)
        passed = res.passed(GRAD_TOL)
        ok &= passed
        print_fn(f"{'PASS' if passed else 'FAIL'} gradient stockformer[{attention}]+stock_tanh: max rel err {res.max_rel_error:.2e}")
    worst, exact = probsparse_oracle()
    passed = worst < ORACLE_TOL and exact
    ok &= passed
    print_fn(f"{'PASS' if passed else 'FAIL'} probsparse oracle: max |diff| {worst:.2e}, mean(V) rows exact: {exact}")
    return ok
