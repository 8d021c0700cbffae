"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every gradient in this package flows through this module. Operations record
themselves on a thread-local tape; ``backward`` replays the tape in reverse
and accumulates gradients into the ``grad`` buffer of every tensor that
requires them. Tensors and the tape they were recorded on belong to a single
thread; model replicas on separate threads each get their own tape.

Only the broadcasting the rest of the package needs is supported: equal
shapes, a scalar against anything, and a row vector against a matrix.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


class Tensor:
    """A dense float64 array with optional gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

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
        return float(self.data.item())

    def numpy(self) -> np.ndarray:
        """Copy of the value, detached from any gradient bookkeeping."""
        return np.array(self.data, copy=True)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Operator sugar; all routing goes through the module-level ops so that
    # everything lands on the same tape.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))


def _wrap(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


class TapeEntry:
    """One recorded operation: output, inputs, and the local gradient rule."""

    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...],
                 backward_fn: Callable[[np.ndarray], tuple]):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of operations; inputs always precede their consumers."""

    __slots__ = ("entries",)

    def __init__(self):
        self.entries: list[TapeEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def clear(self) -> None:
        self.entries.clear()


class _State(threading.local):
    def __init__(self):
        self.tape = Tape()
        self.enabled = True


_STATE = _State()


def active_tape() -> Tape:
    return _STATE.tape


def grad_enabled() -> bool:
    return _STATE.enabled


class no_grad:
    """Context manager that suspends tape recording."""

    def __enter__(self):
        self._prev = _STATE.enabled
        _STATE.enabled = False
        return self

    def __exit__(self, *exc):
        _STATE.enabled = self._prev
        return False


def _record(out: Tensor, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    if _STATE.enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _STATE.tape.entries.append(TapeEntry(out, tuple(inputs), backward_fn))
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires-grad tensor reachable from ``loss``.

    The loss must hold exactly one element. The tape is consumed: it is
    cleared once gradients have been accumulated.
    """
    if loss.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    tape = _STATE.tape
    if not tape.entries:
        raise ValueError("backward() called with an empty tape")

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for entry in reversed(tape.entries):
        g_out = pending.pop(id(entry.out), None)
        if g_out is None:
            continue
        holders.pop(id(entry.out), None)
        if entry.out.requires_grad:
            _accumulate_grad(entry.out, g_out)
        for tensor, g_in in zip(entry.inputs, entry.backward_fn(g_out)):
            if g_in is None:
                continue
            key = id(tensor)
            if key in pending:
                pending[key] = pending[key] + g_in
            else:
                pending[key] = g_in
                holders[key] = tensor
    for key, tensor in holders.items():
        if tensor.requires_grad:
            _accumulate_grad(tensor, pending[key])
    tape.clear()


def _accumulate_grad(tensor: Tensor, g: np.ndarray) -> None:
    if tensor.grad is None:
        tensor.grad = np.array(g, copy=True)
    else:
        tensor.grad = tensor.grad + g


def stop_gradient(x: Tensor) -> Tensor:
    """Same value as ``x``; no gradient flows through the result."""
    return Tensor(x.data)


# ---------------------------------------------------------------------------
# Elementwise arithmetic. Broadcasting is limited to scalar-vs-anything and
# row-vector-vs-matrix; anything else is a shape error.
# ---------------------------------------------------------------------------

def _broadcast_mode(a: Tensor, b: Tensor, op: str) -> str:
    if a.shape == b.shape:
        return "same"
    if b.size == 1:
        return "b_scalar"
    if a.size == 1:
        return "a_scalar"
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return "b_row"
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, mode: str, side: str) -> np.ndarray:
    if mode == "same":
        return g
    if mode == "b_scalar":
        return g if side == "a" else np.sum(g).reshape(())
    if mode == "a_scalar":
        return np.sum(g).reshape(()) if side == "a" else g
    # b_row: b was a row vector broadcast over a's rows
    return g if side == "a" else np.sum(g, axis=0)


def add(a: Tensor, b: Tensor) -> Tensor:
    mode = _broadcast_mode(a, b, "add")
    out = Tensor(a.data + b.data)

    def bwd(g):
        return _unbroadcast(g, mode, "a"), _unbroadcast(g, mode, "b")

    return _record(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    mode = _broadcast_mode(a, b, "sub")
    out = Tensor(a.data - b.data)

    def bwd(g):
        return _unbroadcast(g, mode, "a"), _unbroadcast(-g, mode, "b")

    return _record(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    mode = _broadcast_mode(a, b, "mul")
    out = Tensor(a.data * b.data)

    def bwd(g):
        return (_unbroadcast(g * b.data, mode, "a"),
                _unbroadcast(g * a.data, mode, "b"))

    return _record(out, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    mode = _broadcast_mode(a, b, "div")
    out = Tensor(a.data / b.data)

    def bwd(g):
        return (_unbroadcast(g / b.data, mode, "a"),
                _unbroadcast(-g * a.data / (b.data * b.data), mode, "b"))

    return _record(out, (a, b), bwd)


def neg(x: Tensor) -> Tensor:
    out = Tensor(-x.data)
    return _record(out, (x,), lambda g: (-g,))


# ---------------------------------------------------------------------------
# Matrix products
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeError(f"matmul: only 1-D/2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} vs {b.shape}")
    out = Tensor(a.data @ b.data)
    an, bn = a.ndim, b.ndim

    def bwd(g):
        if an == 2 and bn == 2:
            return g @ b.data.T, a.data.T @ g
        if an == 1 and bn == 2:
            return b.data @ g, np.outer(a.data, g)
        if an == 2 and bn == 1:
            return np.outer(g, b.data), a.data.T @ g
        return g * b.data, g * a.data

    return _record(out, (a, b), bwd)


# ---------------------------------------------------------------------------
# Elementwise nonlinearities
# ---------------------------------------------------------------------------

def sigmoid(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(s)
    return _record(out, (x,), lambda g: (g * s * (1.0 - s),))


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    mask = x.data > 0.0  # subgradient 0 at exactly 0
    return _record(out, (x,), lambda g: (g * mask,))


# The hinge in the margin loss is the same primitive under another name.
max_with_zero = relu


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)
    out = Tensor(e)
    return _record(out, (x,), lambda g: (g * e,))


def log(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.data))
    return _record(out, (x,), lambda g: (g / x.data,))


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), evaluated stably."""
    out = Tensor(np.logaddexp(0.0, x.data))
    s = 1.0 / (1.0 + np.exp(-x.data))
    return _record(out, (x,), lambda g: (g * s,))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / np.sum(e, axis=axis, keepdims=True)
    out = Tensor(s)

    def bwd(g):
        inner = np.sum(g * s, axis=axis, keepdims=True)
        return (s * (g - inner),)

    return _record(out, (x,), bwd)


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------

def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001 - op name
    out = Tensor(np.sum(x.data, axis=axis))
    shape = x.shape

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _record(out, (x,), bwd)


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    out = Tensor(np.mean(x.data, axis=axis))
    shape = x.shape
    count = x.size if axis is None else shape[axis]

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / count, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis) / count, shape).copy(),)

    return _record(out, (x,), bwd)


def amax(x: Tensor, axis: int | None = None) -> Tensor:
    """Maximum along an axis; the subgradient goes to the first argmax."""
    out = Tensor(np.max(x.data, axis=axis))
    shape = x.shape

    if axis is None:
        flat_idx = int(np.argmax(x.data))

        def bwd(g):
            gx = np.zeros(shape)
            gx.flat[flat_idx] = float(g)
            return (gx,)
    else:
        arg = np.argmax(x.data, axis=axis)

        def bwd(g):
            gx = np.zeros(shape)
            np.put_along_axis(gx, np.expand_dims(arg, axis),
                              np.expand_dims(g, axis), axis=axis)
            return (gx,)

    return _record(out, (x,), bwd)


# ---------------------------------------------------------------------------
# Shape and indexing ops
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(x.data.reshape(shape))
    old = x.shape
    return _record(out, (x,), lambda g: (g.reshape(old),))


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    if not ts:
        raise ValueError("concat: need at least one tensor")
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis))
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, tuple(ts), bwd)


def gather_rows(x: Tensor, indices) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"gather_rows: expected a matrix, got shape {x.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    n = x.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"gather_rows: index out of bounds for {n} rows")
    out = Tensor(x.data[idx])
    shape = x.shape

    def bwd(g):
        gx = np.zeros(shape)
        np.add.at(gx, idx, g)
        return (gx,)

    return _record(out, (x,), bwd)


def scatter_add_rows(x: Tensor, indices, num_rows: int) -> Tensor:
    """Rows of ``x`` summed into a fresh ``(num_rows, d)`` array at ``indices``."""
    if x.ndim != 2:
        raise ShapeError(f"scatter_add_rows: expected a matrix, got shape {x.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.shape[0] != x.shape[0]:
        raise ShapeError(
            f"scatter_add_rows: {idx.shape[0]} indices for {x.shape[0]} rows")
    if idx.size and (idx.min() < 0 or idx.max() >= num_rows):
        raise IndexError(f"scatter_add_rows: index out of bounds for {num_rows} rows")
    acc = np.zeros((num_rows, x.shape[1]))
    np.add.at(acc, idx, x.data)
    out = Tensor(acc)
    return _record(out, (x,), lambda g: (g[idx],))


def broadcast_row(v: Tensor, num_rows: int) -> Tensor:
    if v.ndim != 1:
        raise ShapeError(f"broadcast_row: expected a vector, got shape {v.shape}")
    out = Tensor(np.broadcast_to(v.data, (num_rows, v.shape[0])).copy())
    return _record(out, (v,), lambda g: (np.sum(g, axis=0),))


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Inner product of two vectors (scalar output)."""
    if a.ndim != 1 or b.ndim != 1:
        raise ShapeError(f"dot: expected vectors, got {a.shape} and {b.shape}")
    return matmul(a, b)
