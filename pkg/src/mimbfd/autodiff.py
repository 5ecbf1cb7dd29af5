"""Dense 2-D tensors with reverse-mode differentiation, plus Adam.

Every tensor is a float64 matrix. Operations never broadcast: row/column
vectors are combined with matrices only through the explicit ``add_bias`` and
``scale_rows`` ops.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import NumericError, ShapeError, StateError

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    """A float64 matrix that optionally records how it was computed."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        elif arr.ndim != 2:
            raise ShapeError(f"Tensor: expected at most 2 dims, got {arr.ndim}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._op = "leaf"
        self._consumed = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor has shape {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{tag})"

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Tensor) -> Tensor:
        return sub(self, other)

    def __mul__(self, other: Tensor) -> Tensor:
        return mul(self, other)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def __neg__(self) -> Tensor:
        return scale(self, -1.0)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _make(data: np.ndarray, parents: Sequence[Tensor], fn: BackwardFn, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._consumed = False
    out._op = op
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------- arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def add_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data + c, (a,), lambda g: (g,), "add_scalar")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims of {a.shape} and {b.shape} differ")
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def transpose(a: Tensor) -> Tensor:
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x + b with b of shape (1, cols) added to every row."""
    if b.shape != (1, x.shape[1]):
        raise ShapeError(f"add_bias: bias {b.shape} incompatible with {x.shape}")
    return _make(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0, keepdims=True)), "add_bias")


def scale_rows(x: Tensor, w: Tensor) -> Tensor:
    """Multiply row i of x by w[i]; w has shape (rows, 1)."""
    if w.shape != (x.shape[0], 1):
        raise ShapeError(f"scale_rows: weights {w.shape} incompatible with {x.shape}")
    xd, wd = x.data, w.data
    return _make(xd * wd, (x, w), lambda g: (g * wd, (g * xd).sum(axis=1, keepdims=True)), "scale_rows")


# ------------------------------------------------------------- elementwise

def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softplus_np(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def softplus(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return _make(softplus_np(x.data), (x,), lambda g: (g * s,), "softplus")


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    d = np.where(x.data > 0, 1.0, slope)
    return _make(x.data * d, (x,), lambda g: (g * d,), "leaky_relu")


def abs_(x: Tensor) -> Tensor:
    sgn = np.sign(x.data)
    return _make(np.abs(x.data), (x,), lambda g: (g * sgn,), "abs")


def square(x: Tensor) -> Tensor:
    xd = x.data
    return _make(xd * xd, (x,), lambda g: (2.0 * g * xd,), "square")


# ------------------------------------------------------------- reductions

def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _make(np.array([[x.data.sum()]]), (x,), lambda g: (np.full(shape, g[0, 0]),), "sum_all")


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.data.size)


def sum_cols(x: Tensor) -> Tensor:
    """Row sums as a (rows, 1) column."""
    cols = x.shape[1]
    return _make(x.data.sum(axis=1, keepdims=True), (x,), lambda g: (np.repeat(g, cols, axis=1),), "sum_cols")


def mean_rows(x: Tensor) -> Tensor:
    """Column means as a (1, cols) row."""
    rows = x.shape[0]
    return _make(
        x.data.mean(axis=0, keepdims=True), (x,), lambda g: (np.repeat(g / rows, rows, axis=0),), "mean_rows"
    )


def concat_cols(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise ShapeError("concat_cols: empty input")
    rows = xs[0].shape[0]
    for x in xs:
        if x.shape[0] != rows:
            raise ShapeError(f"concat_cols: row counts {[t.shape[0] for t in xs]} differ")
    bounds = np.cumsum([0] + [x.shape[1] for x in xs])

    def fn(g):
        return [g[:, bounds[i]:bounds[i + 1]] for i in range(len(xs))]

    return _make(np.concatenate([x.data for x in xs], axis=1), xs, fn, "concat_cols")


def mean_stack(xs: Sequence[Tensor]) -> Tensor:
    """Elementwise mean of equally shaped tensors."""
    if not xs:
        raise ShapeError("mean_stack: empty input")
    for x in xs[1:]:
        _same_shape("mean_stack", xs[0], x)
    k = len(xs)
    acc = xs[0].data.copy()
    for x in xs[1:]:
        acc += x.data
    return _make(acc / k, xs, lambda g: [g / k] * k, "mean_stack")


# --------------------------------------------------------- indexing/graph

def gather_rows(x: Tensor, index) -> Tensor:
    idx = np.asarray(index, dtype=np.int64)
    n = x.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeError(f"gather_rows: index out of range for {n} rows")

    def fn(g):
        out = np.zeros((n, g.shape[1]))
        np.add.at(out, idx, g)
        return (out,)

    return _make(x.data[idx], (x,), fn, "gather_rows")


def pick(x: Tensor, cols) -> Tensor:
    """Select x[i, cols[i]] for every row; returns (rows, 1)."""
    c = np.asarray(cols, dtype=np.int64)
    if c.shape != (x.shape[0],):
        raise ShapeError(f"pick: need one column per row, got {c.shape} for {x.shape}")
    r = np.arange(x.shape[0])
    shape = x.shape

    def fn(g):
        out = np.zeros(shape)
        out[r, c] = g[:, 0]
        return (out,)

    return _make(x.data[r, c].reshape(-1, 1), (x,), fn, "pick")


def take(x: Tensor, rows, cols, shape: tuple[int, int]) -> Tensor:
    """Elements x[rows[k], cols[k]] laid out row-major into ``shape``."""
    r = np.asarray(rows, dtype=np.int64).ravel()
    c = np.asarray(cols, dtype=np.int64).ravel()
    if r.shape != c.shape or r.size != shape[0] * shape[1]:
        raise ShapeError(f"take: {r.size} indices cannot fill shape {shape}")
    src_shape = x.shape

    def fn(g):
        out = np.zeros(src_shape)
        np.add.at(out, (r, c), g.ravel())
        return (out,)

    return _make(x.data[r, c].reshape(shape), (x,), fn, "take")


def spmm(matrix: sp.spmatrix, x: Tensor) -> Tensor:
    """Constant sparse matrix times tensor."""
    if matrix.shape[1] != x.shape[0]:
        raise ShapeError(f"spmm: matrix {matrix.shape} incompatible with {x.shape}")
    m = sp.csr_matrix(matrix)
    mt = m.T.tocsr()
    return _make(np.asarray(m @ x.data), (x,), lambda g: (np.asarray(mt @ g),), "spmm")


def weighted_mean_operator(index, weight, num_rows: int, num_src: int | None = None) -> sp.csr_matrix:
    """Sparse matrix mapping source rows to per-target weighted means.

    Entry k contributes ``weight[k]`` of source row k to target row ``index[k]``;
    each target row is divided by its total weight. Targets without entries
    map to zero.
    """
    index = np.asarray(index, dtype=np.int64)
    weight = np.asarray(weight, dtype=np.float64)
    m = len(index) if num_src is None else num_src
    totals = np.bincount(index, weights=weight, minlength=num_rows)
    safe = np.where(totals > 0, totals, 1.0)
    vals = weight / safe[index]
    return sp.csr_matrix((vals, (index, np.arange(len(index)))), shape=(num_rows, m))


def scatter_weighted_mean(src: Tensor, index, weight, num_rows: int) -> Tensor:
    """out[t] = sum_k weight[k] * src[k] / sum_k weight[k] over k with index[k] == t."""
    if len(index) != src.shape[0] or len(weight) != src.shape[0]:
        raise ShapeError("scatter_weighted_mean: index/weight length must equal source rows")
    return spmm(weighted_mean_operator(index, weight, num_rows, src.shape[0]), src)


def log_softmax(x: Tensor) -> Tensor:
    """Row-wise log-softmax."""
    z = x.data - x.data.max(axis=1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    soft = np.exp(out)
    return _make(out, (x,), lambda g: (g - soft * g.sum(axis=1, keepdims=True),), "log_softmax")


# --------------------------------------------------------------- backward

def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires grad."""
    if loss.shape != (1, 1):
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._consumed:
        raise StateError("backward: graph already differentiated; recompute the loss")
    if not loss.requires_grad:
        raise StateError("backward: loss does not depend on any parameter")
    loss._consumed = True

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def zero_grad(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None


# ------------------------------------------------------------------- Adam

@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], state: AdamState) -> AdamState:
    """One bias-corrected Adam update, in place on ``params``; a missing grad counts as zero."""
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ShapeError("adam_step: parameter list changed since the first step")
    for i, g in enumerate(grads):
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericError(f"adam_step: non-finite gradient for parameter {params[i].name or i}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ShapeError(f"adam_step: grad {g.shape} vs param {p.data.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 0.01, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self) -> None:
        zero_grad(self.params)

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state)
