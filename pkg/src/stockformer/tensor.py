"""Dense n-d tensors with reverse-mode automatic differentiation.

Every differentiable operation records its parents and a closure mapping the
output gradient to parent gradients.  ``backward`` orders the recorded graph
topologically and replays it once in reverse, then drops the recorded closures
so intermediate buffers can be freed.

Binary elementwise operations require identical shapes.  The only implicit
broadcast is a Python scalar operand; anything else must go through
``expand`` or ``add_bias``.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NonFiniteError, ShapeError, StockformerError

_GRAD_ENABLED = True
_DEFAULT_DTYPE = np.float64

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """n-dimensional real array that optionally tracks gradients.

    ``data`` is a numpy array (float64 unless created otherwise).  ``grad`` is
    ``None`` until a backward pass reaches this tensor, then a Tensor of the
    same shape.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype or _infer_dtype(data), copy=True)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Tensor | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"

    # -- basic properties -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported; multiply by a reciprocal")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    # methods mirroring the free functions
    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def tanh(self):
        return tanh(self)

    def exp(self):
        return exp(self)

    def ln(self):
        return ln(self)

    def backward(self) -> None:
        backward(self)


def _infer_dtype(data):
    if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
        return data.dtype
    return _DEFAULT_DTYPE


def _check_shape(shape) -> tuple[int, ...]:
    shape = tuple(int(d) for d in shape)
    if not shape:
        raise ShapeError("shape must have at least one dimension")
    if any(d < 1 for d in shape):
        raise ShapeError(f"all dimensions must be >= 1, got {shape}")
    return shape


# -- creation -------------------------------------------------------------


def zeros(shape, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(np.zeros(_check_shape(shape), dtype=dtype or _DEFAULT_DTYPE), requires_grad)


def ones(shape, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(np.ones(_check_shape(shape), dtype=dtype or _DEFAULT_DTYPE), requires_grad)


def randn(shape, seed: int | np.random.Generator, requires_grad: bool = False, dtype=None) -> Tensor:
    """Standard-normal tensor; identical seeds give bit-identical values."""
    shape = _check_shape(shape)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(_as_seed(seed))
    return Tensor(rng.standard_normal(shape).astype(dtype or _DEFAULT_DTYPE), requires_grad)


def from_values(values, shape, requires_grad: bool = False, dtype=None) -> Tensor:
    shape = _check_shape(shape)
    flat = np.asarray(values, dtype=dtype or _DEFAULT_DTYPE).ravel()
    expected = int(np.prod(shape))
    if flat.size != expected:
        raise ShapeError(f"{flat.size} values cannot fill shape {shape} ({expected} elements)")
    return Tensor(flat.reshape(shape), requires_grad)


def tensor_create(kind: str, shape, seed: int | None = None, values=None, requires_grad: bool = False) -> Tensor:
    if kind == "zeros":
        return zeros(shape, requires_grad)
    if kind == "ones":
        return ones(shape, requires_grad)
    if kind == "randn":
        if seed is None:
            raise StockformerError("randn requires a seed")
        return randn(shape, seed, requires_grad)
    if kind == "from_values":
        return from_values(values, shape, requires_grad)
    raise ValueError(f"unknown tensor kind {kind!r}")


def _as_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- graph construction ---------------------------------------------------


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out.requires_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -- elementwise ----------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return _make(a.data + c, (a,), lambda g: (g,), "add_scalar")
    _same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return scale(a, b)
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,), "exp")


def ln(a: Tensor) -> Tensor:
    x = a.data
    if np.any(x <= 0):
        raise NonFiniteError("ln of non-positive element")
    return _make(np.log(x), (a,), lambda g: (g / x,), "ln")


def abs_(a: Tensor) -> Tensor:
    x = a.data
    # np.sign(0) == 0 gives the zero subgradient at the kink
    return _make(np.abs(x), (a,), lambda g: (g * np.sign(x),), "abs")


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    inner = _SQRT_2_OVER_PI * (x + _GELU_C * x**3)
    t = np.tanh(inner)
    y = 0.5 * x * (1.0 + t)

    def _bw(g):
        dinner = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _make(y, (a,), _bw, "gelu")


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "tanh": tanh,
    "exp": exp,
    "ln": ln,
    "gelu": gelu,
    "sigmoid": sigmoid,
    "abs": abs_,
}


def elementwise(op: str, a: Tensor, b=None) -> Tensor:
    """Dispatch an elementwise op by name."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    if op in ("add", "sub", "mul", "scale"):
        if b is None:
            raise ValueError(f"{op} needs a second operand")
        return fn(a, b)
    return fn(a)


# -- linear algebra ---------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over identical leading dimensions."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    if a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def _bw(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _make(ad @ bd, (a, b), _bw, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight (+ bias)`` applied over the last axis of any-rank ``x``."""
    lead = x.shape[:-1]
    flat = reshape(x, (int(np.prod(lead)) if lead else 1, x.shape[-1]))
    out = matmul(flat, weight)
    if bias is not None:
        out = add_bias(out, bias)
    return reshape(out, lead + (weight.shape[-1],))


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a vector along the last axis (the one explicit broadcast)."""
    if bias.shape != x.shape[-1:]:
        raise ShapeError(f"bias shape {bias.shape} does not match last axis of {x.shape}")
    lead_axes = tuple(range(x.ndim - 1))
    return _make(x.data + bias.data, (x, bias), lambda g: (g, g.sum(axis=lead_axes)), "add_bias")


def mul_vector(x: Tensor, vec: Tensor) -> Tensor:
    """Multiply by a vector along the last axis."""
    if vec.shape != x.shape[-1:]:
        raise ShapeError(f"vector shape {vec.shape} does not match last axis of {x.shape}")
    lead_axes = tuple(range(x.ndim - 1))
    xd, vd = x.data, vec.data
    return _make(xd * vd, (x, vec), lambda g: (g * vd, (g * xd).sum(axis=lead_axes)), "mul_vector")


# -- reductions -------------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    shape = a.shape

    def _bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.sum(a.data, axis=axes, keepdims=keepdims), (a,), _bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes]))
    shape = a.shape

    def _bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, shape).copy(),)

    return _make(np.mean(a.data, axis=axes, keepdims=keepdims), (a,), _bw, "mean")


# -- views and indexing -----------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return _make(out, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def swap_last(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def getitem(a: Tensor, index) -> Tensor:
    shape, dtype = a.shape, a.data.dtype

    def _bw(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(a.data[index]), (a,), _bw, "getitem")


def expand(a: Tensor, shape) -> Tensor:
    """Explicit broadcast to ``shape`` (numpy rules, same rank required)."""
    shape = tuple(shape)
    if len(shape) != a.ndim:
        raise ShapeError(f"expand keeps rank: {a.shape} -> {shape}")
    axes = tuple(i for i, (s, t) in enumerate(zip(a.shape, shape)) if s != t)
    if any(a.shape[i] != 1 for i in axes):
        raise ShapeError(f"cannot expand {a.shape} to {shape}")
    return _make(
        np.broadcast_to(a.data, shape).copy(),
        (a,),
        lambda g: (g.sum(axis=axes, keepdims=True),),
        "expand",
    )


def take_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows along axis -2; ``index`` has shape ``a.shape[:-2] + (u,)``.

    Indices within one slice must be distinct.
    """
    idx = np.asarray(index)[..., None]
    shape, dtype = a.shape, a.data.dtype

    def _bw(g):
        full = np.zeros(shape, dtype=dtype)
        np.put_along_axis(full, np.broadcast_to(idx, g.shape), g, axis=-2)
        return (full,)

    return _make(np.take_along_axis(a.data, idx, axis=-2), (a,), _bw, "take_rows")


def put_rows(base: Tensor, index: np.ndarray, rows: Tensor) -> Tensor:
    """Copy of ``base`` with rows ``index`` (axis -2) replaced by ``rows``."""
    idx = np.broadcast_to(np.asarray(index)[..., None], rows.shape)
    out = base.data.copy()
    np.put_along_axis(out, idx, rows.data, axis=-2)

    def _bw(g):
        gb = g.copy()
        np.put_along_axis(gb, idx, 0.0, axis=-2)
        return gb, np.take_along_axis(g, idx, axis=-2)

    return _make(out, (base, rows), _bw, "put_rows")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def _bw(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), _bw, "concat")


# -- backward ---------------------------------------------------------------


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def _consumed(g):
    raise RuntimeError("graph already consumed by backward(); pass retain_graph=True to reuse it")


def backward(loss: Tensor, retain_graph: bool = False) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise StockformerError("loss does not depend on any tensor that requires grad")
    order = _topological_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                if node.grad is None:
                    node.grad = Tensor(g, dtype=node.data.dtype)
                else:
                    node.grad.data = node.grad.data + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    if not retain_graph:
        for node in order:
            if node._backward is not None:
                node._backward = _consumed


def parameters_grad_l2(params: Iterable[Tensor]) -> float:
    """L2 norm of all gradients taken together (missing grads count as zero)."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.data.astype(np.float64) ** 2))
    return math.sqrt(total)
