"""Minimal reverse-mode automatic differentiation.

Values live on a :class:`Tape` in construction order, which is a valid
topological order, so backpropagation is a single reverse sweep.  Each value
holds a float64 numpy array (0-d for scalars); local partials are stored as
vector-Jacobian closures.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "TapeError",
    "Value",
    "Tape",
    "forward_op",
    "backward",
    "add",
    "sub",
    "mul",
    "matvec",
    "tanh",
    "logistic",
    "relu",
    "linear_identity",
    "logit",
    "concat",
    "take",
    "total",
    "OPS",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        desc = ", ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {desc}")


class TapeError(RuntimeError):
    pass


class Value:
    """A node of the computation graph."""

    __slots__ = ("data", "grad", "parents", "op", "id", "tape", "name")

    def __init__(self, data, tape: "Tape", op: str = "leaf", parents=(), name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)
        # (parent Value, vjp: upstream adjoint -> contribution to parent)
        self.parents: tuple[tuple[Value, Callable[[np.ndarray], np.ndarray]], ...] = tuple(parents)
        self.op = op
        self.tape = tape
        self.name = name
        self.id = -1

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Value(op={self.op!r}, id={self.id}, data={self.data!r})"

    def __add__(self, other):
        return add(self, _lift(self.tape, other))

    def __radd__(self, other):
        return add(_lift(self.tape, other), self)

    def __sub__(self, other):
        return sub(self, _lift(self.tape, other))

    def __rsub__(self, other):
        return sub(_lift(self.tape, other), self)

    def __mul__(self, other):
        return mul(self, _lift(self.tape, other))

    def __rmul__(self, other):
        return mul(_lift(self.tape, other), self)


class Tape:
    """Append-only record of values.

    ``checkpoint()`` returns a marker; ``truncate(marker)`` discards every
    value recorded after it (e.g. to reuse parameter leaves across steps).
    """

    def __init__(self):
        self.values: list[Value] = []

    def __len__(self):
        return len(self.values)

    def _record(self, v: Value) -> Value:
        v.id = len(self.values)
        self.values.append(v)
        return v

    def leaf(self, data, name=None) -> Value:
        return self._record(Value(np.array(data, dtype=np.float64), self, "leaf", (), name))

    def const(self, data) -> Value:
        return self._record(Value(np.array(data, dtype=np.float64), self, "const"))

    def checkpoint(self) -> int:
        return len(self.values)

    def truncate(self, marker: int) -> None:
        for v in self.values[marker:]:
            v.tape = None
        del self.values[marker:]

    def reset(self) -> None:
        for v in self.values:
            v.grad = np.zeros_like(v.data)

    def owns(self, v: Value) -> bool:
        return v.tape is self and 0 <= v.id < len(self.values) and self.values[v.id] is v


def _lift(tape: Tape, x) -> Value:
    if isinstance(x, Value):
        return x
    return tape.const(x)


def _tape_of(op: str, inputs: Sequence[Value]) -> Tape:
    tape = None
    for v in inputs:
        if not isinstance(v, Value):
            raise TypeError(f"{op}: expected Value, got {type(v).__name__}")
        if v.tape is None:
            raise TapeError(f"{op}: input value {v.id} is not on a tape")
        if tape is None:
            tape = v.tape
        elif v.tape is not tape:
            raise TapeError(f"{op}: inputs belong to different tapes")
    return tape


def _new(tape: Tape, op: str, data, parents) -> Value:
    return tape._record(Value(data, tape, op, parents))


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    # only scalar <-> array broadcasting is permitted by the binary ops
    if g.shape == tuple(shape):
        return g
    return np.asarray(g.sum()).reshape(shape)


def _binary_shapes(op: str, a: Value, b: Value):
    if a.shape != b.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise ShapeError(op, a.shape, b.shape)


def add(a: Value, b: Value) -> Value:
    tape = _tape_of("add", (a, b))
    _binary_shapes("add", a, b)
    sa, sb = a.shape, b.shape
    return _new(tape, "add", a.data + b.data,
                ((a, lambda g: _unbroadcast(g, sa)), (b, lambda g: _unbroadcast(g, sb))))


def sub(a: Value, b: Value) -> Value:
    tape = _tape_of("sub", (a, b))
    _binary_shapes("sub", a, b)
    sa, sb = a.shape, b.shape
    return _new(tape, "sub", a.data - b.data,
                ((a, lambda g: _unbroadcast(g, sa)), (b, lambda g: -_unbroadcast(g, sb))))


def mul(a: Value, b: Value) -> Value:
    tape = _tape_of("mul", (a, b))
    _binary_shapes("mul", a, b)
    ad, bd = a.data, b.data
    return _new(tape, "mul", ad * bd,
                ((a, lambda g: _unbroadcast(g * bd, ad.shape)),
                 (b, lambda g: _unbroadcast(g * ad, bd.shape))))


def matvec(w: Value, x: Value) -> Value:
    """Matrix-vector product ``w @ x`` for ``w`` of shape (q, p), ``x`` of shape (p,)."""
    tape = _tape_of("matvec", (w, x))
    if w.data.ndim != 2 or x.data.ndim != 1 or w.shape[1] != x.shape[0]:
        raise ShapeError("matvec", w.shape, x.shape)
    wd, xd = w.data, x.data
    return _new(tape, "matvec", wd @ xd,
                ((w, lambda g: np.outer(g, xd)), (x, lambda g: wd.T @ g)))


def _pointwise(op: str, x: Value, y: np.ndarray, dydx: np.ndarray) -> Value:
    tape = _tape_of(op, (x,))
    return _new(tape, op, y, ((x, lambda g: g * dydx),))


def tanh(x: Value) -> Value:
    y = np.tanh(x.data)
    return _pointwise("tanh", x, y, 1.0 - y * y)


def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    # split by sign so exp never overflows
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def logistic(x: Value) -> Value:
    y = _sigmoid(x.data)
    return _pointwise("logistic", x, y, y * (1.0 - y))


def relu(x: Value) -> Value:
    return _pointwise("relu", x, np.maximum(x.data, 0.0), (x.data > 0).astype(np.float64))


def linear_identity(x: Value) -> Value:
    return _pointwise("linear_identity", x, x.data.copy(), np.ones_like(x.data))


def logit(x: Value, clamp: float = 1e-12) -> Value:
    """``log(x / (1 - x))`` with the input clamped to ``[clamp, 1 - clamp]``.

    Clamped coordinates get zero local derivative.
    """
    xc = np.clip(x.data, clamp, 1.0 - clamp)
    inside = (xc == x.data).astype(np.float64)
    return _pointwise("logit", x, np.log(xc) - np.log1p(-xc), inside / (xc * (1.0 - xc)))


def concat(parts: Sequence[Value]) -> Value:
    tape = _tape_of("concat", parts)
    for p in parts:
        if p.data.ndim != 1:
            raise ShapeError("concat", *(q.shape for q in parts))
    sizes = [p.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)
    parents = tuple(
        (p, (lambda lo, hi: lambda g: g[lo:hi])(offsets[i], offsets[i + 1]))
        for i, p in enumerate(parts)
    )
    return _new(tape, "concat", np.concatenate([p.data for p in parts]), parents)


def take(x: Value, start: int, stop: int) -> Value:
    """Contiguous slice ``x[start:stop]`` of a vector."""
    tape = _tape_of("take", (x,))
    n = x.shape[0] if x.data.ndim == 1 else -1
    if n < 0 or not (0 <= start < stop <= n):
        raise ShapeError("take", x.shape, (start, stop))

    def vjp(g):
        out = np.zeros(n)
        out[start:stop] = g
        return out

    return _new(tape, "take", x.data[start:stop].copy(), ((x, vjp),))


def total(x: Value) -> Value:
    """Sum of all entries, as a scalar."""
    tape = _tape_of("total", (x,))
    shape = x.shape
    return _new(tape, "total", np.asarray(x.data.sum()),
                ((x, lambda g: np.broadcast_to(g, shape).copy()),))


OPS: dict[str, Callable[..., Value]] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "matvec": matvec,
    "tanh": tanh,
    "logistic": logistic,
    "relu": relu,
    "linear_identity": linear_identity,
    "logit": logit,
    "concat": lambda *parts: concat(parts),
    "take": take,
    "total": total,
}


def forward_op(op: str, inputs: Sequence) -> Value:
    """Apply a named operation to a list of input values."""
    try:
        fn = OPS[op]
    except KeyError:
        raise ValueError(f"unknown operation {op!r}") from None
    return fn(*inputs)


def backward(tape: Tape, root: Value) -> dict[int, np.ndarray]:
    """Propagate d(root)/d(value) into every ``.grad`` on the tape.

    Gradients accumulate across calls until :meth:`Tape.reset`.  Returns a
    map from leaf id to the gradient contributed by this call.
    """
    if not isinstance(root, Value) or not tape.owns(root):
        raise TapeError("backward: root is not on this tape")
    if root.data.size != 1:
        raise ShapeError("backward", root.shape)
    adj: dict[int, np.ndarray] = {root.id: np.ones_like(root.data)}
    values = tape.values
    out: dict[int, np.ndarray] = {}
    for i in range(root.id, -1, -1):
        g = adj.pop(i, None)
        if g is None:
            continue
        v = values[i]
        v.grad = v.grad + g
        if v.op == "leaf":
            out[i] = g
            continue
        for parent, vjp in v.parents:
            contrib = vjp(g)
            j = parent.id
            prev = adj.get(j)
            adj[j] = contrib if prev is None else prev + contrib
    return out
