"""Dense float64 tensors with taped reverse-mode differentiation.

Values live in numpy arrays. A Tape records differentiable operations as
they execute; backward() replays the records in reverse order exactly once,
accumulating gradients additively on every tensor that asked for them.
Every operation checks its result for NaN/Inf and raises NumericError
rather than letting a non-finite value propagate silently.

The active-tape stack is module state: one training run owns the process.
Parallel runs must live in separate processes with disjoint tensors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "NumericError",
    "TapeError",
    "backward",
    "forward_op",
    "matmul",
    "add",
    "sub",
    "mul",
    "mul_scalar",
    "relu",
    "reshape",
    "concat",
    "mean_over_axis",
    "std_over_axis",
    "log_softmax",
    "exp",
    "log",
    "sum",
    "square",
]

STD_EPS = 1e-6  # added under the square root so std is differentiable at zero variance


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NumericError(ArithmeticError):
    """An operation produced NaN or Inf."""


class TapeError(RuntimeError):
    """Tape misuse: nested activation, reuse, or missing provenance."""


class Tensor:
    """A dense float64 value, optionally carrying a same-shape gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def set_requires_grad(self, flag: bool) -> None:
        """Toggle gradient tracking, keeping the grad-present-iff-tracking invariant."""
        flag = bool(flag)
        if flag == self.requires_grad:
            return
        self.requires_grad = flag
        self.grad = np.zeros_like(self.data) if flag else None

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def detach(self) -> "Tensor":
        """A gradient-free copy; used for stop-gradient (teacher) paths."""
        return Tensor(self.data.copy(), requires_grad=False)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass
class _Record:
    op: str
    inputs: tuple
    output: Tensor
    backward_fn: Callable[[np.ndarray], tuple]


class Tape:
    """Ordered record of executed differentiable operations.

    Use as a context manager around a forward pass. Records are appended in
    execution order, so every operand of record i was produced by an earlier
    record or is a leaf; backward() visits them once, in reverse.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self.consumed = False
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        if _TAPE_STACK:
            raise TapeError("nested tapes are not supported; one tape per forward pass")
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TAPE_STACK.pop()

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: "Tensor") -> None:
        backward(loss, self)


_TAPE_STACK: list[Tape] = []


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _as_tensor(x, op: str) -> Tensor:
    if not isinstance(x, Tensor):
        raise TypeError(f"{op}: expected Tensor operand, got {type(x).__name__}")
    return x


def _check_finite(op: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{op} produced non-finite values")


def _apply(op: str, inputs: tuple, out_data: np.ndarray, backward_fn) -> Tensor:
    _check_finite(op, out_data)
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=requires)
    tape = _active_tape()
    if tape is not None and requires:
        tape.records.append(_Record(op, inputs, out, backward_fn))
        tape._produced.add(id(out))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = _as_tensor(a, "matmul")
    b = _as_tensor(b, "matmul")
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bwd(g):
        return g @ bd.T, ad.T @ g

    return _apply("matmul", (a, b), ad @ bd, bwd)


def _broadcast_shapes(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as err:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from err


def add(a: Tensor, b: Tensor) -> Tensor:
    a = _as_tensor(a, "add")
    b = _as_tensor(b, "add")
    _broadcast_shapes("add", a, b)
    ash, bsh = a.shape, b.shape

    def bwd(g):
        return _unbroadcast(g, ash), _unbroadcast(g, bsh)

    return _apply("add", (a, b), a.data + b.data, bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a = _as_tensor(a, "sub")
    b = _as_tensor(b, "sub")
    _broadcast_shapes("sub", a, b)
    ash, bsh = a.shape, b.shape

    def bwd(g):
        return _unbroadcast(g, ash), _unbroadcast(-g, bsh)

    return _apply("sub", (a, b), a.data - b.data, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (broadcasting) product."""
    a = _as_tensor(a, "mul")
    b = _as_tensor(b, "mul")
    _broadcast_shapes("mul", a, b)
    ad, bd = a.data, b.data
    ash, bsh = a.shape, b.shape

    def bwd(g):
        return _unbroadcast(g * bd, ash), _unbroadcast(g * ad, bsh)

    return _apply("mul", (a, b), ad * bd, bwd)


def mul_scalar(x: Tensor, scalar: float) -> Tensor:
    x = _as_tensor(x, "mul_scalar")
    s = float(scalar)

    def bwd(g):
        return (g * s,)

    return _apply("mul_scalar", (x,), x.data * s, bwd)


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x, "relu")
    xd = x.data

    def bwd(g):
        return (g * (xd > 0.0),)

    return _apply("relu", (x,), np.maximum(xd, 0.0), bwd)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x, "reshape")
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    old = x.shape

    def bwd(g):
        return (g.reshape(old),)

    return _apply("reshape", (x,), x.data.reshape(shape), bwd)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = tuple(_as_tensor(t, "concat") for t in tensors)
    if not ts:
        raise ShapeError("concat: no operands")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as err:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]} along axis {axis}") from err
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _apply("concat", ts, out, bwd)


def mean_over_axis(x: Tensor, axis: int) -> Tensor:
    x = _as_tensor(x, "mean_over_axis")
    if not -x.data.ndim <= axis < x.data.ndim:
        raise ShapeError(f"mean_over_axis: axis {axis} out of range for shape {x.shape}")
    n = x.shape[axis]
    xsh = x.shape
    ax = axis % x.data.ndim

    def bwd(g):
        return (np.broadcast_to(np.expand_dims(g, ax) / n, xsh).copy(),)

    return _apply("mean_over_axis", (x,), x.data.mean(axis=axis), bwd)


def std_over_axis(x: Tensor, axis: int) -> Tensor:
    """Population standard deviation with STD_EPS under the root: sqrt(var + eps)."""
    x = _as_tensor(x, "std_over_axis")
    if not -x.data.ndim <= axis < x.data.ndim:
        raise ShapeError(f"std_over_axis: axis {axis} out of range for shape {x.shape}")
    n = x.shape[axis]
    if n < 2:
        raise ShapeError(f"std_over_axis: need >= 2 elements along axis {axis}, got {n}")
    ax = axis % x.data.ndim
    mu = x.data.mean(axis=ax, keepdims=True)
    out = np.sqrt(((x.data - mu) ** 2).mean(axis=ax) + STD_EPS)
    centered = x.data - mu
    out_keep = np.expand_dims(out, ax)

    def bwd(g):
        return (np.expand_dims(g, ax) * centered / (n * out_keep),)

    return _apply("std_over_axis", (x,), out, bwd)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _as_tensor(x, "log_softmax")
    xd = x.data
    m = xd.max(axis=axis, keepdims=True)
    shifted = xd - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def bwd(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _apply("log_softmax", (x,), out, bwd)


def exp(x: Tensor) -> Tensor:
    x = _as_tensor(x, "exp")
    with np.errstate(over="ignore"):
        out = np.exp(x.data)

    def bwd(g):
        return (g * out,)

    return _apply("exp", (x,), out, bwd)


def log(x: Tensor) -> Tensor:
    x = _as_tensor(x, "log")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    xd = x.data

    def bwd(g):
        return (g / xd,)

    return _apply("log", (x,), out, bwd)


def sum(x: Tensor) -> Tensor:  # noqa: A001 - deliberate op name, mirrors np.sum usage
    """Full reduction to a scalar (shape ())."""
    x = _as_tensor(x, "sum")
    xsh = x.shape

    def bwd(g):
        return (np.broadcast_to(g, xsh).copy(),)

    return _apply("sum", (x,), np.asarray(x.data.sum()), bwd)


def square(x: Tensor) -> Tensor:
    x = _as_tensor(x, "square")
    xd = x.data

    def bwd(g):
        return (2.0 * xd * g,)

    return _apply("square", (x,), xd * xd, bwd)


_OPS: dict[str, Callable] = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "mul_scalar": mul_scalar,
    "relu": relu,
    "reshape": reshape,
    "concat": concat,
    "mean_over_axis": mean_over_axis,
    "std_over_axis": std_over_axis,
    "log_softmax": log_softmax,
    "exp": exp,
    "log": log,
    "sum": sum,
    "square": square,
}


def forward_op(kind: str, *operands, **kwargs) -> Tensor:
    """Dispatch an operation by name. concat receives its operands as a group."""
    try:
        fn = _OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}") from None
    if kind == "concat":
        return fn(operands, **kwargs)
    return fn(*operands, **kwargs)


def op_kinds() -> tuple[str, ...]:
    return tuple(_OPS)


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate gradients of everything that contributed to a scalar loss.

    Gradients accumulate additively: a leaf used through k paths receives
    the sum of the k contributions. The tape is single-use.
    """
    if loss.data.size != 1:
        raise TapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if tape.consumed:
        raise TapeError("backward: tape already consumed")
    if id(loss) not in tape._produced:
        raise TapeError("backward: loss was not produced under this tape")
    tape.consumed = True
    loss.grad += 1.0
    for rec in reversed(tape.records):
        g = rec.output.grad
        grads = rec.backward_fn(g)
        for t, gt in zip(rec.inputs, grads):
            if t.requires_grad and gt is not None:
                t.grad += gt
