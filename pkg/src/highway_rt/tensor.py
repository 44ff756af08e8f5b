"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable operation appends a node ``(output, inputs, vjp)`` to a
thread-local tape when gradient recording is enabled and at least one input
requires a gradient.  :func:`backward` replays the tape in reverse, pushing
adjoints through each node's vector-Jacobian product, and then clears it.

There is deliberately no general broadcasting.  Bias rows are added with
:func:`add_row_bias` and per-row scaling goes through :func:`mul_col`.
"""

from __future__ import annotations

import os
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

# Set HIGHWAY_RT_DEBUG=1 to assert finiteness after every forward op.
DEBUG = os.environ.get("HIGHWAY_RT_DEBUG", "") not in ("", "0")

VJP = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class _TapeState(threading.local):
    def __init__(self) -> None:
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], VJP]] = []
        self.enabled = True


_state = _TapeState()


def is_grad_enabled() -> bool:
    return _state.enabled


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference, finite differences)."""
    prev = _state.enabled
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def clear_tape() -> None:
    """Drop every recorded node without computing gradients."""
    _state.nodes.clear()


def tape_size() -> int:
    return len(_state.nodes)


class Tensor:
    """A dense row-major float64 array with an optional gradient.

    Tensors are treated as immutable once built; only ``grad`` changes, and
    only through :func:`backward` or explicit zeroing.
    """

    __slots__ = ("data", "requires_grad", "grad", "is_leaf", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.is_leaf = True
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Tensor) -> Tensor:
        return sub(self, other)

    def __mul__(self, other: Tensor) -> Tensor:
        return mul(self, other)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def __neg__(self) -> Tensor:
        return neg(self)

    @property
    def T(self) -> Tensor:
        return transpose(self)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], vjp: VJP) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.is_leaf = True
    out.requires_grad = False
    if DEBUG and not np.all(np.isfinite(data)):
        if all(np.all(np.isfinite(t.data)) for t in inputs):
            raise FloatingPointError("non-finite output from finite inputs")
    if _state.enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.is_leaf = False
        _state.nodes.append((out, inputs, vjp))
    return out


def _check_2d(name: str, *ts: Tensor) -> None:
    for t in ts:
        if t.ndim != 2:
            raise DimensionError(f"{name} expects 2-D operands, got shape {t.shape}")


def _check_same(name: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_2d("matmul", a, b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner extents differ for shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def transpose(a: Tensor) -> Tensor:
    _check_2d("transpose", a)
    return _make(np.ascontiguousarray(a.data.T), (a,), lambda g: (g.T,))


def matvec(x: Tensor, w: Tensor) -> Tensor:
    """``x @ w`` for a matrix ``x`` [m, n] and vector ``w`` [n]."""
    if x.ndim != 2 or w.ndim != 1 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"matvec: incompatible shapes {x.shape} and {w.shape}")
    xd, wd = x.data, w.data
    return _make(xd @ wd, (x, w), lambda g: (np.outer(g, wd), xd.T @ g))


def vecmat(a: Tensor, x: Tensor) -> Tensor:
    """``a @ x`` for a vector ``a`` [m] and matrix ``x`` [m, n]."""
    if a.ndim != 1 or x.ndim != 2 or a.shape[0] != x.shape[0]:
        raise DimensionError(f"vecmat: incompatible shapes {a.shape} and {x.shape}")
    ad, xd = a.data, x.data
    return _make(ad @ xd, (a, x), lambda g: (xd @ g, np.outer(ad, g)))


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 1 or a.shape != b.shape:
        raise DimensionError(f"dot: expected equal 1-D shapes, got {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _make(np.asarray(ad @ bd), (a, b), lambda g: (g * bd, g * ad))


def row_dot(a: Tensor, b: Tensor) -> Tensor:
    """Inner product of matching rows: the diagonal of ``a @ b.T``."""
    _check_2d("row_dot", a, b)
    _check_same("row_dot", a, b)
    ad, bd = a.data, b.data
    return _make(
        np.einsum("ij,ij->i", ad, bd),
        (a, b),
        lambda g: (g[:, None] * bd, g[:, None] * ad),
    )


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same("add", a, b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same("sub", a, b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same("mul", a, b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _make(a.data + float(c), (a,), lambda g: (g,))


def add_row_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add the vector ``b`` [n] to every row of ``x`` [m, n]."""
    if x.ndim != 2 or b.ndim != 1 or x.shape[1] != b.shape[0]:
        raise DimensionError(f"add_row_bias: incompatible shapes {x.shape} and {b.shape}")
    return _make(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)))


def mul_col(x: Tensor, c: Tensor) -> Tensor:
    """Scale row ``i`` of ``x`` [m, n] by ``c[i]`` (``c`` has shape [m])."""
    if x.ndim != 2 or c.ndim != 1 or x.shape[0] != c.shape[0]:
        raise DimensionError(f"mul_col: incompatible shapes {x.shape} and {c.shape}")
    xd, cd = x.data, c.data
    return _make(
        xd * cd[:, None],
        (x, c),
        lambda g: (g * cd[:, None], np.einsum("ij,ij->i", g, xd)),
    )


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def softplus(x: Tensor) -> Tensor:
    """``log(1 + exp(x))`` without overflow."""
    xd = x.data

    def vjp(g):
        return (g * _sigmoid(xd),)

    return _make(np.logaddexp(0.0, xd), (x,), vjp)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# Normalisation
# ---------------------------------------------------------------------------


def row_softmax(x: Tensor) -> Tensor:
    _check_2d("row_softmax", x)
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _make(y, (x,), vjp)


LAYER_NORM_EPS = 1e-5


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    _check_2d("layer_norm", x)
    d = x.shape[1]
    if d < 2:
        raise DimensionError(f"layer_norm needs at least 2 features, got {d}")
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match width {d}"
        )
    xd = x.data
    mu = xd.mean(axis=1, keepdims=True)
    centered = xd - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    gd = gain.data

    def vjp(g):
        dxhat = g * gd
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _make(xhat * gd + bias.data, (x, gain, bias), vjp)


def logsumexp(x: Tensor) -> Tensor:
    """Log-sum-exp of a non-empty vector, shifted by its maximum."""
    if x.ndim != 1 or x.shape[0] == 0:
        raise ContractError(f"logsumexp needs a non-empty vector, got shape {x.shape}")
    xd = x.data
    m = xd.max()
    e = np.exp(xd - m)
    s = e.sum()
    w = e / s
    return _make(np.asarray(m + np.log(s)), (x,), lambda g: (g * w,))


# ---------------------------------------------------------------------------
# Reductions and reshaping
# ---------------------------------------------------------------------------


def sum(x: Tensor) -> Tensor:  # noqa: A001
    shape = x.shape
    return _make(np.asarray(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),))


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return _make(np.asarray(x.data.mean()), (x,), lambda g: (np.full(shape, float(g) / n),))


def max_rows(x: Tensor) -> Tensor:
    """Per-column maximum over rows; ties send the gradient to the first row."""
    _check_2d("max_rows", x)
    if x.shape[0] == 0:
        raise ContractError("max_rows over zero rows")
    idx = np.argmax(x.data, axis=0)
    cols = np.arange(x.shape[1])
    shape = x.shape

    def vjp(g):
        dx = np.zeros(shape)
        dx[idx, cols] = g
        return (dx,)

    return _make(x.data[idx, cols], (x,), vjp)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    old = x.shape
    if int(np.prod(shape)) != x.size:
        raise DimensionError(f"reshape: cannot view {old} as {shape}")
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ContractError("concat_cols of nothing")
    _check_2d("concat_cols", *parts)
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise DimensionError(f"concat_cols: row counts differ {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def vjp(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return _make(np.concatenate([p.data for p in parts], axis=1), tuple(parts), vjp)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ContractError("concat_rows of nothing")
    _check_2d("concat_rows", *parts)
    widths = {p.shape[1] for p in parts}
    if len(widths) != 1:
        raise DimensionError(f"concat_rows: widths differ {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def vjp(g):
        return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return _make(np.concatenate([p.data for p in parts], axis=0), tuple(parts), vjp)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    _check_2d("slice_cols", x)
    shape = x.shape

    def vjp(g):
        dx = np.zeros(shape)
        dx[:, start:stop] = g
        return (dx,)

    return _make(x.data[:, start:stop].copy(), (x,), vjp)


def take_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Gather rows of ``table``; gradients scatter-add back (embedding lookup)."""
    _check_2d("take_rows", table)
    idx = np.asarray(ids, dtype=np.int64)
    shape = table.shape

    def vjp(g):
        dt = np.zeros(shape)
        np.add.at(dt, idx, g)
        return (dt,)

    return _make(table.data[idx], (table,), vjp)


def take(x: Tensor, ids: Sequence[int]) -> Tensor:
    """Gather entries of a vector."""
    if x.ndim != 1:
        raise DimensionError(f"take expects a vector, got shape {x.shape}")
    idx = np.asarray(ids, dtype=np.int64)
    n = x.shape[0]

    def vjp(g):
        dx = np.zeros(n)
        np.add.at(dx, idx, g)
        return (dx,)

    return _make(x.data[idx], (x,), vjp)


def stack(scalars: Sequence[Tensor]) -> Tensor:
    """Stack scalar tensors into a vector."""
    scalars = list(scalars)
    for s in scalars:
        if s.size != 1:
            raise DimensionError(f"stack expects scalars, got shape {s.shape}")
    shapes = [s.shape for s in scalars]

    def vjp(g):
        return tuple(np.reshape(g[i], shapes[i]) for i in range(len(scalars)))

    return _make(np.array([s.item() for s in scalars]), tuple(scalars), vjp)


# ---------------------------------------------------------------------------
# Reverse pass
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every recorded tensor reachable from ``loss``.

    Leaf gradients accumulate across calls; the tape is freed afterwards.
    """
    if loss.size != 1 or loss.ndim > 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss was not produced by a recorded computation")
    nodes = _state.nodes
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    try:
        for out, inputs, vjp in reversed(nodes):
            g = adjoint.pop(id(out), None)
            if g is None:
                continue
            out.grad = g
            for inp, gi in zip(inputs, vjp(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if inp.is_leaf:
                    inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
                else:
                    key = id(inp)
                    prev = adjoint.get(key)
                    adjoint[key] = gi if prev is None else prev + gi
    finally:
        nodes.clear()


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
