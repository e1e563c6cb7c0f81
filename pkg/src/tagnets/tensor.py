"""Dense float64 tensors with reverse-mode automatic differentiation.

Differentiable operations executed while a :class:`Tape` is active append
backward rules to it; :func:`backward` replays the rules in reverse order
and accumulates gradients additively into every tensor reachable from the
loss. Outside a tape, the same operations run as plain forward numerics,
which is how inference avoids recording overhead.

A tape and the tensors it references are confined to one thread of
execution. Distinct training runs may proceed in parallel as long as they
share no tape or parameter tensors.
"""

from __future__ import annotations

import struct
import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


class Tensor:
    """A dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # arithmetic operators delegate to the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)


class _Node:
    __slots__ = ("out", "inputs", "fn")

    def __init__(self, out: Tensor, inputs: tuple, fn: Callable):
        self.out = out
        self.inputs = inputs
        self.fn = fn


class Tape:
    """Ordered record of operations for one backward replay.

    Usage::

        with Tape() as tape:
            loss = model(x)
        backward(loss, tape)
    """

    def __init__(self):
        self._nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def __enter__(self) -> "Tape":
        _tls.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tls.stack.pop()

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


class _TapeLocal(threading.local):
    def __init__(self):
        self.stack: list[Tape] = []


_tls = _TapeLocal()


def active_tape() -> Optional[Tape]:
    return _tls.stack[-1] if _tls.stack else None


def record(out: Tensor, inputs: Sequence[Tensor], fn: Callable) -> None:
    """Attach a backward rule for ``out`` to the active tape, if any.

    ``fn`` maps the output gradient array to a tuple of input gradient
    arrays aligned with ``inputs`` (``None`` where unneeded).
    """
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape._nodes.append(_Node(out, tuple(inputs), fn))


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor on the tape.

    The loss must be a scalar produced through ``tape``. Gradients add to
    whatever is already stored, so calling twice without a reset doubles
    every gradient.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape._nodes):
        g = grads.pop(id(node.out), None)
        holders.pop(id(node.out), None)
        if g is None:
            continue
        contribs = node.fn(g)
        for inp, dg in zip(node.inputs, contribs):
            if dg is None:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + dg
            else:
                grads[key] = dg
                holders[key] = inp
    for key, g in grads.items():
        t = holders[key]
        t.grad = g.copy() if t.grad is None else t.grad + g


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, a.requires_grad or b.requires_grad)

    def fn(dy):
        da = _unbroadcast(dy, a.shape) if a.requires_grad else None
        db = _unbroadcast(dy, b.shape) if b.requires_grad else None
        return da, db

    record(out, (a, b), fn)
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data, a.requires_grad or b.requires_grad)

    def fn(dy):
        da = _unbroadcast(dy, a.shape) if a.requires_grad else None
        db = _unbroadcast(-dy, b.shape) if b.requires_grad else None
        return da, db

    record(out, (a, b), fn)
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, a.requires_grad or b.requires_grad)

    def fn(dy):
        da = _unbroadcast(dy * b.data, a.shape) if a.requires_grad else None
        db = _unbroadcast(dy * a.data, b.shape) if b.requires_grad else None
        return da, db

    record(out, (a, b), fn)
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents disagree: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data, a.requires_grad or b.requires_grad)

    def fn(dy):
        da = dy @ b.data.T if a.requires_grad else None
        db = a.data.T @ dy if b.requires_grad else None
        return da, db

    record(out, (a, b), fn)
    return out


def getitem(a: Tensor, key) -> Tensor:
    """Basic slicing only; backward scatters into the sliced positions."""
    out = Tensor(a.data[key], a.requires_grad)

    def fn(dy):
        if not a.requires_grad:
            return (None,)
        da = np.zeros_like(a.data)
        da[key] = dy
        return (da,)

    record(out, (a,), fn)
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), a.requires_grad)

    def fn(dy):
        return (dy.reshape(a.shape) if a.requires_grad else None,)

    record(out, (a,), fn)
    return out


def tsum(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum(), a.requires_grad)

    def fn(dy):
        return (np.full(a.shape, float(dy)) if a.requires_grad else None,)

    record(out, (a,), fn)
    return out


def tmean(a: Tensor) -> Tensor:
    n = a.size
    out = Tensor(a.data.mean(), a.requires_grad)

    def fn(dy):
        return (np.full(a.shape, float(dy) / n) if a.requires_grad else None,)

    record(out, (a,), fn)
    return out


def log(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.log(a.data), a.requires_grad)

    def fn(dy):
        return (dy / a.data if a.requires_grad else None,)

    record(out, (a,), fn)
    return out


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes through strictly inside."""
    a = as_tensor(a)
    out = Tensor(np.clip(a.data, lo, hi), a.requires_grad)

    def fn(dy):
        if not a.requires_grad:
            return (None,)
        mask = (a.data > lo) & (a.data < hi)
        return (dy * mask,)

    record(out, (a,), fn)
    return out


def sigmoid(a: Tensor) -> Tensor:
    """Logistic function, numerically stable over the full float64 range."""
    a = as_tensor(a)
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor(y, a.requires_grad)

    def fn(dy):
        if not a.requires_grad:
            return (None,)
        d = 1.0 - y
        d *= y
        d *= dy
        return (d,)

    record(out, (a,), fn)
    return out


def tanh(a: Tensor) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    out = Tensor(y, a.requires_grad)

    def fn(dy):
        if not a.requires_grad:
            return (None,)
        d = y * y
        np.subtract(1.0, d, out=d)
        d *= dy
        return (d,)

    record(out, (a,), fn)
    return out


def elu(a: Tensor) -> Tensor:
    """Exponential linear unit with alpha=1 (slope 1 at the origin)."""
    a = as_tensor(a)
    x = a.data
    # y = max(x, 0) + expm1(min(x, 0)); two passes, no boolean gathers
    y = np.minimum(x, 0.0)
    np.expm1(y, out=y)
    np.add(y, np.maximum(x, 0.0), out=y)
    out = Tensor(y, a.requires_grad)

    def fn(dy):
        if not a.requires_grad:
            return (None,)
        # derivative is 1 for y > 0 and y + 1 (= exp(x)) otherwise
        d = np.minimum(y, 0.0)
        d += 1.0
        d *= dy
        return (d,)

    record(out, (a,), fn)
    return out


# --- serialization -------------------------------------------------------
#
# Wire format (little endian): u32 rank, rank x u32 extents, then the raw
# float64 payload in row-major order. Used for spectrogram files and for
# the entries of checkpoint archives.

_U32 = struct.Struct("<I")


def array_to_bytes(a: np.ndarray) -> bytes:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim and not a.flags.c_contiguous:
        a = np.ascontiguousarray(a)
    head = _U32.pack(a.ndim) + b"".join(_U32.pack(n) for n in a.shape)
    return head + a.astype("<f8", copy=False).tobytes()


def array_from_bytes(raw: bytes) -> np.ndarray:
    if len(raw) < 4:
        raise ValueError("truncated tensor blob: missing rank")
    (rank,) = _U32.unpack_from(raw, 0)
    need = 4 + 4 * rank
    if len(raw) < need:
        raise ValueError("truncated tensor blob: missing extents")
    shape = tuple(_U32.unpack_from(raw, 4 + 4 * i)[0] for i in range(rank))
    count = int(np.prod(shape)) if shape else 1
    if len(raw) != need + 8 * count:
        raise ValueError(
            f"tensor blob payload size {len(raw) - need} does not match shape {shape}"
        )
    return np.frombuffer(raw, dtype="<f8", offset=need, count=count).reshape(shape).copy()


def save_array(path, a: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(array_to_bytes(a))


def load_array(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return array_from_bytes(fh.read())
