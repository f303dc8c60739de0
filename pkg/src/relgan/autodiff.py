"""Tape-based reverse-mode automatic differentiation on float64 arrays.

Every operation on a taped :class:`Tensor` appends a node to its
:class:`Tape`.  :func:`backward` walks the tape in reverse.  With
``create_graph=True`` the backward rules are themselves recorded on the
tape, so a function of a first-order gradient (the gradient penalty) can be
differentiated again.

Tensors that carry no tape are plain detached values; the same op code runs
on them without recording anything.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    """log/sqrt evaluated outside their domain."""


@dataclass
class Node:
    kind: str
    inputs: tuple[int, ...]
    value: np.ndarray
    attrs: dict = field(default_factory=dict)
    name: str | None = None


class Tape:
    """Append-only record of primitive ops, in topological order."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self):
        return len(self.nodes)

    def _append(self, kind, inputs, value, attrs=None, name=None) -> "Tensor":
        self.nodes.append(Node(kind, tuple(inputs), value, attrs or {}, name))
        return Tensor(value, self, len(self.nodes) - 1)

    def leaf(self, value, name: str | None = None) -> "Tensor":
        """Record a differentiable input (parameter or data)."""
        return self._append("leaf", (), _as_array(value), name=name)

    def const(self, value) -> "Tensor":
        return self._append("const", (), _as_array(value))

    def replay(self) -> list[np.ndarray]:
        """Recompute every node's forward value from the recorded inputs."""
        values: list[np.ndarray] = []
        for node in self.nodes:
            if not node.inputs:
                values.append(node.value)
                continue
            op = OPS[node.kind]
            values.append(op.forward([values[i] for i in node.inputs], node.attrs))
        return values


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("non-finite value entered the graph")
    return arr


class Tensor:
    """An n-d float64 value, optionally bound to a node on a tape."""

    __slots__ = ("data", "tape", "node_id")
    __array_priority__ = 100

    def __init__(self, data, tape: Tape | None = None, node_id: int | None = None):
        self.data = data if isinstance(data, np.ndarray) and data.dtype == np.float64 else _as_array(data)
        self.tape = tape
        self.node_id = node_id

    def __repr__(self):
        where = f", node={self.node_id}" if self.tape is not None else ""
        return f"Tensor({self.data!r}{where})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __add__(self, other):
        return record("add", self, other)

    def __radd__(self, other):
        return record("add", other, self)

    def __sub__(self, other):
        return record("sub", self, other)

    def __rsub__(self, other):
        return record("sub", other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return record("scale", self, c=float(other))
        return record("mul", self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return record("scale", self, c=float(other))
        return record("mul", other, self)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return record("scale", self, c=1.0 / float(other))
        return record("div", self, other)

    def __rtruediv__(self, other):
        return record("div", other, self)

    def __neg__(self):
        return record("neg", self)

    def __matmul__(self, other):
        return record("matmul", self, other)

    def __rmatmul__(self, other):
        return record("matmul", other, self)

    def __getitem__(self, key):
        return record("slice", self, key=key)

    def sum(self, axis=None):
        return record("sum", self, axis=axis)

    def mean(self, axis=None):
        return record("mean", self, axis=axis)

    def exp(self):
        return record("exp", self)

    def log(self):
        return record("log", self)

    def sigmoid(self):
        return record("sigmoid", self)

    def log_sigmoid(self):
        return record("log_sigmoid", self)

    def tanh(self):
        return record("tanh", self)

    def relu(self):
        return record("relu", self)

    def leaky_relu(self, alpha: float = 0.2):
        return record("leaky_relu", self, alpha=float(alpha))

    def max0(self):
        return record("max0", self)

    def square(self):
        return record("square", self)

    def sqrt(self):
        return record("sqrt", self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return record("reshape", self, shape=tuple(shape))

    @property
    def T(self):
        return record("transpose", self)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _common_tape(inputs: Sequence[Tensor]) -> Tape | None:
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ValueError("inputs are recorded on different tapes")
            tape = t.tape
    return tape


def record(kind: str, *inputs, **attrs) -> Tensor:
    """Apply primitive ``kind`` and record it on the inputs' tape (if any)."""
    op = OPS.get(kind)
    if op is None:
        raise KeyError(f"unknown op {kind!r}")
    tensors = [as_tensor(x) for x in inputs]
    out = op.forward([t.data for t in tensors], attrs)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{kind} produced non-finite values")
    tape = _common_tape(tensors)
    if tape is None:
        return Tensor(out)
    ids = [t.node_id if t.tape is tape else tape.const(t.data).node_id for t in tensors]
    return tape._append(kind, ids, out, attrs)


# -- op definitions -----------------------------------------------------------

@dataclass(frozen=True)
class Op:
    forward: Callable[[list, dict], np.ndarray]
    # backward(g, inputs, out, attrs, need) -> list of input grads (or None)
    backward: Callable


OPS: dict[str, Op] = {}


def _op(name):
    def register(pair):
        fwd, bwd = pair()
        OPS[name] = Op(fwd, bwd)
        return pair
    return register


def _unbroadcast(g: Tensor, shape) -> Tensor:
    if g.shape == tuple(shape):
        return g
    return record("sum_to", g, shape=tuple(shape))


def _broadcast_shapes(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from None


@_op("add")
def _add():
    def fwd(x, attrs):
        _broadcast_shapes(*x)
        return x[0] + x[1]

    def bwd(g, ins, out, attrs, need):
        return [_unbroadcast(g, ins[0].shape) if need[0] else None,
                _unbroadcast(g, ins[1].shape) if need[1] else None]
    return fwd, bwd


@_op("sub")
def _sub():
    def fwd(x, attrs):
        _broadcast_shapes(*x)
        return x[0] - x[1]

    def bwd(g, ins, out, attrs, need):
        return [_unbroadcast(g, ins[0].shape) if need[0] else None,
                -_unbroadcast(g, ins[1].shape) if need[1] else None]
    return fwd, bwd


@_op("mul")
def _mul():
    def fwd(x, attrs):
        _broadcast_shapes(*x)
        return x[0] * x[1]

    def bwd(g, ins, out, attrs, need):
        a, b = ins
        return [_unbroadcast(g * b, a.shape) if need[0] else None,
                _unbroadcast(g * a, b.shape) if need[1] else None]
    return fwd, bwd


@_op("div")
def _div():
    def fwd(x, attrs):
        _broadcast_shapes(*x)
        if np.any(x[1] == 0):
            raise DomainError("division by zero")
        return x[0] / x[1]

    def bwd(g, ins, out, attrs, need):
        a, b = ins
        return [_unbroadcast(g / b, a.shape) if need[0] else None,
                _unbroadcast(-(g * out) / b, b.shape) if need[1] else None]
    return fwd, bwd


@_op("matmul")
def _matmul():
    def fwd(x, attrs):
        a, b = x
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul shapes {a.shape} @ {b.shape}")
        return a @ b

    def bwd(g, ins, out, attrs, need):
        a, b = ins
        return [g @ b.T if need[0] else None, a.T @ g if need[1] else None]
    return fwd, bwd


@_op("transpose")
def _transpose():
    return (lambda x, attrs: x[0].T.copy(),
            lambda g, ins, out, attrs, need: [g.T])


@_op("reshape")
def _reshape():
    def fwd(x, attrs):
        try:
            return x[0].reshape(attrs["shape"])
        except ValueError:
            raise ShapeError(f"cannot reshape {x[0].shape} to {attrs['shape']}") from None

    return fwd, lambda g, ins, out, attrs, need: [g.reshape(ins[0].shape)]


def _reduced_shape(shape, axis):
    keep = list(shape)
    for ax in ([axis] if isinstance(axis, int) else axis):
        keep[ax] = 1
    return tuple(keep)


@_op("sum")
def _sum():
    def bwd(g, ins, out, attrs, need):
        axis = attrs["axis"]
        if axis is not None:
            g = g.reshape(_reduced_shape(ins[0].shape, axis))
        return [record("broadcast_to", g, shape=ins[0].shape)]
    return (lambda x, attrs: np.asarray(np.sum(x[0], axis=attrs["axis"])), bwd)


@_op("mean")
def _mean():
    def bwd(g, ins, out, attrs, need):
        axis = attrs["axis"]
        n = ins[0].data.size // max(out.data.size, 1)
        if axis is not None:
            g = g.reshape(_reduced_shape(ins[0].shape, axis))
        return [record("broadcast_to", g * (1.0 / n), shape=ins[0].shape)]
    return (lambda x, attrs: np.asarray(np.mean(x[0], axis=attrs["axis"])), bwd)


@_op("sum_to")
def _sum_to():
    def fwd(x, attrs):
        v, shape = x[0], attrs["shape"]
        while v.ndim > len(shape):
            v = v.sum(axis=0)
        for i, s in enumerate(shape):
            if s == 1 and v.shape[i] != 1:
                v = v.sum(axis=i, keepdims=True)
        return v

    return fwd, lambda g, ins, out, attrs, need: [record("broadcast_to", g, shape=ins[0].shape)]


@_op("broadcast_to")
def _broadcast_to():
    return (lambda x, attrs: np.broadcast_to(x[0], attrs["shape"]).copy(),
            lambda g, ins, out, attrs, need: [_unbroadcast(g, ins[0].shape)])


@_op("neg")
def _neg():
    return (lambda x, attrs: -x[0], lambda g, ins, out, attrs, need: [-g])


@_op("scale")
def _scale():
    return (lambda x, attrs: x[0] * attrs["c"],
            lambda g, ins, out, attrs, need: [record("scale", g, c=attrs["c"])])


@_op("exp")
def _exp():
    def fwd(x, attrs):
        with np.errstate(over="ignore"):  # overflow is reported as NonFiniteError
            return np.exp(x[0])

    return fwd, lambda g, ins, out, attrs, need: [g * out]


@_op("log")
def _log():
    def fwd(x, attrs):
        if np.any(x[0] <= 0):
            raise DomainError("log of non-positive input")
        return np.log(x[0])

    return fwd, lambda g, ins, out, attrs, need: [g / ins[0]]


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def stable_log_sigmoid(x: np.ndarray) -> np.ndarray:
    return np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))


@_op("sigmoid")
def _sigmoid():
    return (lambda x, attrs: stable_sigmoid(x[0]),
            lambda g, ins, out, attrs, need: [g * (out * (1.0 - out))])


@_op("log_sigmoid")
def _log_sigmoid():
    # d/dx log sigma(x) = sigma(-x)
    return (lambda x, attrs: stable_log_sigmoid(x[0]),
            lambda g, ins, out, attrs, need: [g * (-ins[0]).sigmoid()])


@_op("tanh")
def _tanh():
    return (lambda x, attrs: np.tanh(x[0]),
            lambda g, ins, out, attrs, need: [g * (1.0 - out.square())])


def _mask_grad(mask_fn):
    # The mask is a constant, so the second derivative at the kink is 0.
    return lambda g, ins, out, attrs, need: [g * Tensor(mask_fn(ins[0].data, attrs))]


@_op("relu")
def _relu():
    return (lambda x, attrs: np.maximum(x[0], 0.0),
            _mask_grad(lambda a, attrs: (a > 0).astype(np.float64)))


@_op("max0")
def _max0():
    return (lambda x, attrs: np.maximum(x[0], 0.0),
            _mask_grad(lambda a, attrs: (a > 0).astype(np.float64)))


@_op("leaky_relu")
def _leaky_relu():
    return (lambda x, attrs: np.where(x[0] > 0, x[0], attrs["alpha"] * x[0]),
            _mask_grad(lambda a, attrs: np.where(a > 0, 1.0, attrs["alpha"])))


@_op("square")
def _square():
    return (lambda x, attrs: x[0] * x[0],
            lambda g, ins, out, attrs, need: [record("scale", g * ins[0], c=2.0)])


@_op("sqrt")
def _sqrt():
    def fwd(x, attrs):
        if np.any(x[0] <= 0):
            raise DomainError("sqrt of non-positive input")
        return np.sqrt(x[0])

    return fwd, lambda g, ins, out, attrs, need: [record("scale", g / out, c=0.5)]


@_op("l2_norm_rows")
def _l2_norm_rows():
    def fwd(x, attrs):
        if x[0].ndim != 2:
            raise ShapeError("l2_norm_rows expects a matrix")
        return np.sqrt(np.sum(x[0] * x[0], axis=1))

    def bwd(g, ins, out, attrs, need):
        # Zero rows get zero gradient: a is 0 there, and the divisor is shifted to 1.
        n = ins[0].shape[0]
        safe = out + Tensor((out.data == 0).astype(np.float64))
        return [(g.reshape(n, 1) * ins[0]) / safe.reshape(n, 1)]
    return fwd, bwd


@_op("broadcast_add_row")
def _broadcast_add_row():
    def fwd(x, attrs):
        a, b = x
        if a.ndim != 2 or b.shape != (a.shape[1],):
            raise ShapeError(f"broadcast_add_row shapes {a.shape} + {b.shape}")
        return a + b

    def bwd(g, ins, out, attrs, need):
        return [g if need[0] else None, g.sum(axis=0) if need[1] else None]
    return fwd, bwd


@_op("concat")
def _concat():
    def fwd(x, attrs):
        try:
            return np.concatenate(x, axis=attrs["axis"])
        except ValueError as exc:
            raise ShapeError(str(exc)) from None

    def bwd(g, ins, out, attrs, need):
        axis, start, grads = attrs["axis"], 0, []
        for t, needed in zip(ins, need):
            stop = start + t.shape[axis]
            if needed:
                key = [slice(None)] * g.ndim
                key[axis] = slice(start, stop)
                grads.append(g[tuple(key)])
            else:
                grads.append(None)
            start = stop
        return grads
    return fwd, bwd


@_op("slice")
def _slice():
    def fwd(x, attrs):
        try:
            return np.array(x[0][attrs["key"]], dtype=np.float64)
        except IndexError as exc:
            raise ShapeError(str(exc)) from None

    return fwd, lambda g, ins, out, attrs, need: [
        record("embed", g, key=attrs["key"], shape=ins[0].shape)]


@_op("embed")
def _embed():
    # Adjoint of slice: place the input into zeros of the parent shape.
    def fwd(x, attrs):
        out = np.zeros(attrs["shape"])
        out[attrs["key"]] += x[0]
        return out

    return fwd, lambda g, ins, out, attrs, need: [g[attrs["key"]]]


# -- functional API ----------------------------------------------------------

def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    return record("concat", *tensors, axis=axis)


def l2_norm_rows(x) -> Tensor:
    return record("l2_norm_rows", x)


def broadcast_add_row(a, b) -> Tensor:
    return record("broadcast_add_row", a, b)


def scale(x, c: float) -> Tensor:
    return record("scale", x, c=float(c))


class GradMap(dict):
    """Gradients keyed by node id; also indexable by the leaf Tensor itself."""

    def __getitem__(self, key):
        if isinstance(key, Tensor):
            key = key.node_id
        return super().__getitem__(key)

    def __contains__(self, key):
        if isinstance(key, Tensor):
            key = key.node_id
        return super().__contains__(key)


def backward(output: Tensor, leaves: Iterable[Tensor], *, create_graph: bool = False) -> GradMap:
    """Gradient of scalar ``output`` with respect to each of ``leaves``.

    With ``create_graph`` the returned gradients are themselves taped tensors
    and can be fed to another ``backward`` call.
    """
    tape = output.tape
    if tape is None or output.node_id is None:
        raise ValueError("output is not recorded on a tape")
    if output.shape != ():
        raise ShapeError(f"backward needs a scalar output, got shape {output.shape}")
    leaves = list(leaves)
    for leaf in leaves:
        if leaf.tape is not tape or leaf.node_id is None:
            raise ValueError("leaf is not recorded on this tape")

    nodes = tape.nodes
    end = output.node_id
    leaf_ids = {leaf.node_id for leaf in leaves}
    needed = bytearray(end + 1)
    for lid in leaf_ids:
        if lid <= end:
            needed[lid] = 1
    first = min(leaf_ids, default=end + 1)
    for nid in range(first, end + 1):
        if not needed[nid] and any(needed[i] for i in nodes[nid].inputs):
            needed[nid] = 1

    def view(i):
        return Tensor(nodes[i].value, tape, i) if create_graph else Tensor(nodes[i].value)

    result = GradMap()
    grads: dict[int, Tensor] = {}
    if needed[end]:
        grads[end] = tape.const(1.0) if create_graph else Tensor(1.0)
    for nid in range(end, first - 1, -1):
        g = grads.pop(nid, None)
        if g is None:
            continue
        node = nodes[nid]
        if nid in leaf_ids:
            result[nid] = g
        if not node.inputs:
            continue
        need = [bool(needed[i]) for i in node.inputs]
        in_grads = OPS[node.kind].backward(g, [view(i) for i in node.inputs], view(nid), node.attrs, need)
        for i, gi, n in zip(node.inputs, in_grads, need):
            if gi is None or not n:
                continue
            grads[i] = grads[i] + gi if i in grads else gi

    for leaf in leaves:
        if leaf.node_id not in result:
            zero = np.zeros(leaf.shape)
            result[leaf.node_id] = tape.const(zero) if create_graph else Tensor(zero)
    return result


def unit_norm_penalty(grad: Tensor) -> Tensor:
    """mean over rows of (||g_i||_2 - 1)^2."""
    if grad.ndim == 1:
        grad = grad.reshape(1, -1)
    return (l2_norm_rows(grad) - 1.0).square().mean()


def grad_of_grad(output: Tensor, input_leaf: Tensor, weight_leaves: Iterable[Tensor],
                 penalty: Callable[[Tensor], Tensor] = unit_norm_penalty) -> GradMap:
    """Differentiate ``penalty(d output / d input_leaf)`` w.r.t. ``weight_leaves``."""
    first = backward(output, [input_leaf], create_graph=True)[input_leaf]
    return backward(penalty(first), weight_leaves)
