import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stockformer import functional as F
from stockformer import tensor as T
from stockformer.errors import ShapeError
from stockformer.gradcheck import check_gradients


def conv_oracle(x, k):
    """Direct correlation loop over an explicitly wrap-padded copy."""
    L, c_in = x.shape
    padded = np.vstack([x[-1:], x, x[:1]])
    out = np.zeros((L, k.shape[0]))
    for t in range(L):
        for o in range(k.shape[0]):
            for c in range(c_in):
                for j in range(3):
                    out[t, o] += k[o, c, j] * padded[t + j, c]
    return out


def pool_oracle(x):
    L = x.shape[0]
    padded = np.vstack([np.full((1, x.shape[1]), -np.inf), x, np.full((1, x.shape[1]), -np.inf)])
    return np.array([padded[2 * i : 2 * i + 3].max(axis=0) for i in range(math.ceil(L / 2))])


# -- softmax --------------------------------------------------------------------------


def test_softmax_uniform():
    np.testing.assert_allclose(F.softmax_last_axis(T.zeros((4,))).data, [0.25] * 4, atol=1e-15)


def test_softmax_analytic_pair():
    out = F.softmax_last_axis(T.Tensor([0.0, math.log(3.0)])).data
    np.testing.assert_allclose(out, [0.25, 0.75], atol=1e-15)


def test_softmax_large_logits_stable():
    out = F.softmax_last_axis(T.Tensor([1000.0, 1000.0, -1000.0])).data
    np.testing.assert_allclose(out, [0.5, 0.5, 0.0], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=10), st.floats(-100, 100))
def test_softmax_rows_and_shift_invariance(values, c):
    x = np.array(values)
    s = F.softmax_last_axis(T.Tensor(x)).data
    assert abs(s.sum() - 1.0) < 1e-12
    assert np.all((s >= 0) & (s <= 1))
    np.testing.assert_allclose(F.softmax_last_axis(T.Tensor(x + c)).data, s, atol=1e-12)


# -- layer norm -----------------------------------------------------------------------


def test_layer_norm_constant_slice_is_zero():
    out = F.layer_norm(T.Tensor([[3.0, 3.0, 3.0]]), T.ones((3,)), T.zeros((3,)))
    np.testing.assert_array_equal(out.data, 0.0)


def test_layer_norm_already_normalized():
    out = F.layer_norm(T.Tensor([1.0, -1.0]), T.ones((2,)), T.zeros((2,)), epsilon=1e-15)
    np.testing.assert_allclose(out.data, [1.0, -1.0], atol=1e-12)


def test_layer_norm_beta_shift():
    x = T.Tensor(np.random.default_rng(0).standard_normal((4, 6)))
    out = F.layer_norm(x, T.ones((6,)), T.Tensor(np.full(6, 5.0)))
    np.testing.assert_allclose(out.data.mean(axis=-1), 5.0, atol=1e-12)


def test_layer_norm_affine_shape_checked():
    with pytest.raises(ShapeError):
        F.layer_norm(T.ones((2, 3)), T.ones((2,)), T.zeros((3,)))


# -- conv ---------------------------------------------------------------------------


def test_conv_constant_sum_kernel():
    out = F.conv1d_circular(T.Tensor(np.full((5, 1), 2.0)), T.Tensor(np.ones((1, 1, 3))))
    np.testing.assert_array_equal(out.data, np.full((5, 1), 6.0))


def test_conv_impulse_wraps_last_tap_to_tail():
    k0, k1, k2 = 2.0, 3.0, 5.0
    out = F.conv1d_circular(T.Tensor([[1.0], [0.0], [0.0], [0.0]]), T.Tensor([[[k0, k1, k2]]]))
    assert out.data[:, 0].tolist() == [k1, k0, 0.0, k2]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 20), st.integers(1, 3), st.integers(1, 3), st.integers(0, 10_000))
def test_conv_matches_loop_oracle(L, c_in, c_out, seed):
    rng = np.random.default_rng(seed)
    x, k = rng.standard_normal((L, c_in)), rng.standard_normal((c_out, c_in, 3))
    np.testing.assert_allclose(F.conv1d_circular(T.Tensor(x), T.Tensor(k)).data, conv_oracle(x, k), atol=1e-12)


def test_conv_batched():
    rng = np.random.default_rng(3)
    x, k = rng.standard_normal((2, 6, 2)), rng.standard_normal((4, 2, 3))
    out = F.conv1d_circular(T.Tensor(x), T.Tensor(k)).data
    for b in range(2):
        np.testing.assert_allclose(out[b], conv_oracle(x[b], k), atol=1e-12)


def test_conv_rejects_bad_kernel_width():
    with pytest.raises(ShapeError):
        F.conv1d_circular(T.ones((4, 1)), T.ones((1, 1, 5)))


# -- pool -----------------------------------------------------------------------------


def test_pool_example():
    assert F.max_pool1d(T.Tensor([[1.0], [2.0], [3.0], [4.0]])).data[:, 0].tolist() == [2.0, 4.0]


def test_pool_constant_input():
    np.testing.assert_array_equal(F.max_pool1d(T.Tensor(np.full((7, 2), 1.5))).data, np.full((4, 2), 1.5))


@pytest.mark.parametrize("L", range(1, 257))
def test_conv_and_pool_lengths(L):
    x = T.ones((L, 2))
    assert F.conv1d_circular(x, T.ones((3, 2, 3))).shape == (L, 3)
    assert F.max_pool1d(x).shape == (math.ceil(L / 2), 2)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.integers(0, 10_000))
def test_pool_matches_oracle(L, seed):
    x = np.random.default_rng(seed).standard_normal((L, 3))
    np.testing.assert_array_equal(F.max_pool1d(T.Tensor(x)).data, pool_oracle(x))


def test_pool_tie_gradient_goes_to_first_max():
    x = T.Tensor([[1.0], [1.0], [1.0]], requires_grad=True)
    T.backward(T.sum_(F.max_pool1d(x)))
    # windows: [-inf,1,1] -> row 0; [1,1,-inf] -> row 1
    assert x.grad.data[:, 0].tolist() == [1.0, 1.0, 0.0]


# -- dropout -----------------------------------------------------------------------


def test_dropout_eval_is_identity():
    x = T.Tensor(np.arange(6.0))
    assert F.dropout(x, 0.5, None, train=False) is x


def test_dropout_train_scales_survivors():
    x = T.ones((10_000,))
    out = F.dropout(x, 0.25, np.random.default_rng(0), train=True).data
    kept = out[out != 0]
    np.testing.assert_allclose(kept, 1 / 0.75)
    assert abs(len(kept) / 10_000 - 0.75) < 0.02


# -- gradients ----------------------------------------------------------------------


@pytest.mark.parametrize(
    "build",
    [
        lambda r: (lambda a: F.softmax_last_axis(a), [(3, 5)]),
        lambda r: (lambda a, g, b: F.layer_norm(a, g, b), [(3, 5), (5,), (5,)]),
        lambda r: (lambda a, k: F.conv1d_circular(a, k), [(2, 6, 2), (3, 2, 3)]),
        lambda r: (lambda a: F.max_pool1d(a), [(2, 7, 3)]),
    ],
    ids=["softmax", "layer_norm", "conv", "pool"],
)
def test_functional_gradients(build):
    rng = np.random.default_rng(11)
    op, shapes = build(rng)
    params = [T.Tensor(rng.uniform(-2, 2, s), requires_grad=True) for s in shapes]
    out_shape = op(*params).shape
    w = T.Tensor(rng.standard_normal(out_shape))
    res = check_gradients(lambda: T.sum_(T.mul(T.tanh(op(*params)), w)), params)
    assert res.max_rel_error < 1e-4
