"""Dense tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` whenever
one of their inputs requires a gradient. Outside a tape they only compute
values, which is what evaluation uses.

Backward rules are looked up by name in :data:`BACKWARD_RULES` at backward
time, so a test can swap a rule out and watch the gradient checker fail.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    ContractError,
    DegenerateRowError,
    DimensionError,
    DomainError,
    NumericError,
    TableIndexError,
)

DTYPE = np.float64

_CHECK_FINITE = True


def set_finite_checks(enabled: bool) -> bool:
    """Toggle the per-op NaN/Inf check; returns the previous setting."""
    global _CHECK_FINITE
    previous = _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)
    return previous


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "name", "_produced", "__weakref__")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(values, dtype=DTYPE)
        if arr.dtype != DTYPE:
            arr = arr.astype(DTYPE)
        self.values = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._produced = False

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.values

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; every operator routes through the recorded ops below.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(values, name: str | None = None) -> Tensor:
    return Tensor(values, requires_grad=True, name=name)


def init_uniform(rng: np.random.Generator, shape: tuple, name: str | None = None,
                 scale: float | None = None) -> Tensor:
    """Uniform(-a, a) parameter; ``a`` defaults to the Glorot bound sqrt(6 / (rows + cols))."""
    a = np.sqrt(6.0 / (shape[0] + shape[1])) if scale is None else scale
    return parameter(rng.uniform(-a, a, size=shape), name)


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


@dataclass
class Record:
    op: str
    inputs: tuple
    out: Tensor
    ctx: dict = field(default_factory=dict)


class Tape:
    """Ordered log of differentiable operations.

    A tape can be replayed backward exactly once; reusing it raises
    :class:`ContractError` so stale graphs are never silently accumulated.
    """

    def __init__(self):
        self.records: list[Record] = []
        self.consumed = False
        self.contributions: dict[int, int] = {}

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPES.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self.records)

    def contribution_count(self, tensor: Tensor) -> int:
        """How many backward rules pushed a gradient into ``tensor``."""
        return self.contributions.get(id(tensor), 0)


_TAPES: list[Tape] = []


@contextlib.contextmanager
def no_tape():
    """Suspend recording inside the block (values only)."""
    saved = _TAPES[:]
    _TAPES.clear()
    try:
        yield
    finally:
        _TAPES[:] = saved


def record(op: str, inputs: Sequence[Tensor], out_values: np.ndarray, **ctx) -> Tensor:
    """Wrap ``out_values`` in a tensor and log the op on the active tape.

    Extension kernels call this directly with their own rule name, which must
    be registered in :data:`BACKWARD_RULES`.
    """
    if _CHECK_FINITE and not np.all(np.isfinite(out_values)):
        raise NumericError(f"non-finite output from {op}")
    needs_grad = any(t.requires_grad for t in inputs)
    out = Tensor(out_values, requires_grad=needs_grad)
    if needs_grad and _TAPES:
        out._produced = True
        _TAPES[-1].records.append(Record(op, tuple(inputs), out, ctx))
    return out


# ---------------------------------------------------------------------------
# broadcasting helpers


def _broadcast_shape(sa: tuple, sb: tuple) -> tuple:
    if sa == sb:
        return sa
    if int(np.prod(sa)) == 1 and len(sa) <= len(sb):
        return sb
    if int(np.prod(sb)) == 1 and len(sb) <= len(sa):
        return sa
    # One-sided row broadcasting: the smaller operand stretches along
    # size-1 (or missing leading) axes only.
    for small, big in ((sa, sb), (sb, sa)):
        if len(small) <= len(big):
            padded = (1,) * (len(big) - len(small)) + tuple(small)
            if all(s == 1 or s == b for s, b in zip(padded, big)):
                return tuple(big)
    raise DimensionError(f"cannot broadcast shapes {sa} and {sb}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)
    return record("add", (a, b), a.values + b.values)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)
    return record("sub", (a, b), a.values - b.values)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape)
    return record("mul", (a, b), a.values * b.values)


def scale(a: Tensor, c: float) -> Tensor:
    return record("scale", (a,), a.values * c, c=c)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Split by sign so exp never overflows.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    return record("sigmoid", (a,), _sigmoid(a.values))


def tanh(a: Tensor) -> Tensor:
    return record("tanh", (a,), np.tanh(a.values))


def log1p(a: Tensor) -> Tensor:
    if np.any(a.values < 0):
        raise DomainError("log1p expects non-negative input (time intervals must be >= 0)")
    return record("log1p", (a,), np.log1p(a.values))


def abs_(a: Tensor) -> Tensor:
    return record("abs", (a,), np.abs(a.values))


_UNARY = {"sigmoid": sigmoid, "tanh": tanh, "log1p": log1p, "abs": abs_}
_BINARY = {"add": add, "mul": mul, "sub": sub}


def pointwise(op: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    """Dispatch an elementwise op by name."""
    if op in _UNARY:
        if b is not None:
            raise ContractError(f"{op} takes one operand")
        return _UNARY[op](a)
    if op in _BINARY:
        if b is None:
            raise ContractError(f"{op} takes two operands")
        return _BINARY[op](a, _as_tensor(b))
    raise ContractError(f"unknown pointwise op {op!r}")


# ---------------------------------------------------------------------------
# structural ops


def matmul(a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
    """Matrix product ``a @ b`` (or ``a @ b^T``).

    ``b`` is either a shared 2-D matrix applied to every leading index of
    ``a``, or a 3-D stack with the same batch extent as ``a``.
    """
    sa, sb = a.shape, b.shape
    if a.values.ndim < 2 or b.values.ndim not in (2, 3):
        raise DimensionError(f"matmul needs matrices, got {sa} and {sb}")
    inner_b = sb[-1] if transpose_b else sb[-2]
    if sa[-1] != inner_b or (b.values.ndim == 3 and (a.values.ndim != 3 or sa[0] != sb[0])):
        raise DimensionError(f"matmul shape mismatch: {sa} @ {sb}{'^T' if transpose_b else ''}")
    bv = np.swapaxes(b.values, -1, -2) if transpose_b else b.values
    return record("matmul", (a, b), np.matmul(a.values, bv), transpose_b=transpose_b)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    vals = [t.values for t in tensors]
    try:
        out = np.concatenate(vals, axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat shapes {[v.shape for v in vals]}: {exc}") from None
    sizes = [v.shape[axis] for v in vals]
    return record("concat", tuple(tensors), out, axis=axis, sizes=sizes)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    return record("reshape", (a,), a.values.reshape(shape))


def select(a: Tensor, index: int, axis: int = 1) -> Tensor:
    """``a`` indexed at ``index`` along ``axis`` (that axis is dropped)."""
    return record("select", (a,), np.take(a.values, index, axis=axis).copy(), index=index, axis=axis)


def gather_rows(table: Tensor, ids) -> Tensor:
    """Look up rows of a 2-D table; ``ids`` may have any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    extent = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= extent):
        bad = int(ids[(ids < 0) | (ids >= extent)].flat[0])
        raise TableIndexError(f"id {bad} out of range for table with {extent} rows")
    return record("gather_rows", (table,), table.values[ids], ids=ids)


def row_softmax(a: Tensor, mask=None) -> Tensor:
    """Softmax over the last axis; entries with mask 0 get exactly 0."""
    x = a.values
    if mask is None:
        shifted = x - x.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=-1, keepdims=True)
        return record("row_softmax", (a,), out)
    keep = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if not np.all(keep.any(axis=-1)):
        raise DegenerateRowError("softmax row has no unmasked entry")
    masked = np.where(keep, x, -np.inf)
    shifted = masked - masked.max(axis=-1, keepdims=True)
    e = np.where(keep, np.exp(np.where(keep, shifted, 0.0)), 0.0)
    out = e / e.sum(axis=-1, keepdims=True)
    return record("row_softmax", (a,), out)


def sum_all(a: Tensor) -> Tensor:
    return record("sum_all", (a,), np.array(a.values.sum()))


def mean_all(a: Tensor) -> Tensor:
    return record("mean_all", (a,), np.array(a.values.mean()))


def sq_norm(a: Tensor, skip_first_row: bool = False) -> Tensor:
    """Sum of squares, optionally leaving out row 0 (the padding row)."""
    v = a.values[1:] if skip_first_row else a.values
    return record("sq_norm", (a,), np.array(np.sum(v * v)), skip_first_row=skip_first_row)


def softmax_cross_entropy(logits: Tensor, labels, valid=None) -> Tensor:
    """Mean over rows of ``-log softmax(logits)[label]``.

    ``valid`` is a boolean mask over columns; excluded columns take no
    probability mass (used to drop the padding item).
    """
    x = logits.values
    labels = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or labels.shape != (x.shape[0],):
        raise DimensionError(f"cross entropy expects (B, N) logits and (B,) labels, got {x.shape}, {labels.shape}")
    if valid is None:
        valid = np.ones(x.shape[1], dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    if not valid[labels].all():
        raise ContractError("label points at an excluded column")
    masked = np.where(valid, x, -np.inf)
    m = masked.max(axis=1, keepdims=True)
    e = np.where(valid, np.exp(np.where(valid, masked - m, 0.0)), 0.0)
    z = e.sum(axis=1, keepdims=True)
    probs = e / z
    rows = np.arange(x.shape[0])
    nll = np.log(z[:, 0]) - (x[rows, labels] - m[:, 0])
    return record("softmax_xent", (logits,), np.array(nll.mean()), probs=probs, labels=labels)


# ---------------------------------------------------------------------------
# backward rules


def _bw_add(rec, g):
    a, b = rec.inputs
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _bw_sub(rec, g):
    a, b = rec.inputs
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def _bw_mul(rec, g):
    a, b = rec.inputs
    ga = _unbroadcast(g * b.values, a.shape) if a.requires_grad else None
    gb = _unbroadcast(g * a.values, b.shape) if b.requires_grad else None
    return ga, gb


def _bw_scale(rec, g):
    return (g * rec.ctx["c"],)


def _bw_sigmoid(rec, g):
    y = rec.out.values
    return (g * y * (1.0 - y),)


def _bw_tanh(rec, g):
    y = rec.out.values
    return (g * (1.0 - y * y),)


def _bw_log1p(rec, g):
    return (g / (1.0 + rec.inputs[0].values),)


def _bw_abs(rec, g):
    return (g * np.sign(rec.inputs[0].values),)


def _bw_matmul(rec, g):
    a, b = rec.inputs
    tb = rec.ctx["transpose_b"]
    ga = gb = None
    if a.requires_grad:
        ga = np.matmul(g, b.values) if tb else np.matmul(g, np.swapaxes(b.values, -1, -2))
    if b.requires_grad:
        if b.values.ndim == 2:
            a2 = a.values.reshape(-1, a.shape[-1])
            g2 = g.reshape(-1, g.shape[-1])
            gb = g2.T @ a2 if tb else a2.T @ g2
        else:
            gb = (np.matmul(np.swapaxes(g, -1, -2), a.values) if tb
                  else np.matmul(np.swapaxes(a.values, -1, -2), g))
    return ga, gb


def _bw_concat(rec, g):
    axis, sizes = rec.ctx["axis"], rec.ctx["sizes"]
    cuts = np.cumsum(sizes)[:-1]
    return tuple(np.split(g, cuts, axis=axis))


def _bw_reshape(rec, g):
    return (g.reshape(rec.inputs[0].shape),)


def _bw_select(rec, g):
    a = rec.inputs[0]
    out = np.zeros(a.shape, dtype=DTYPE)
    idx = [slice(None)] * a.values.ndim
    idx[rec.ctx["axis"]] = rec.ctx["index"]
    out[tuple(idx)] = g
    return (out,)


def _bw_gather_rows(rec, g):
    from . import kernels

    table = rec.inputs[0]
    out = np.zeros(table.shape, dtype=DTYPE)
    ids = rec.ctx["ids"].reshape(-1)
    kernels.scatter_add_rows(out, ids, np.ascontiguousarray(g.reshape(ids.size, -1)))
    return (out,)


def _bw_row_softmax(rec, g):
    y = rec.out.values
    return (y * (g - np.sum(g * y, axis=-1, keepdims=True)),)


def _bw_sum_all(rec, g):
    return (np.full(rec.inputs[0].shape, float(g), dtype=DTYPE),)


def _bw_mean_all(rec, g):
    a = rec.inputs[0]
    return (np.full(a.shape, float(g) / max(a.size, 1), dtype=DTYPE),)


def _bw_sq_norm(rec, g):
    a = rec.inputs[0]
    out = 2.0 * float(g) * a.values
    if rec.ctx["skip_first_row"]:
        out = out.copy()
        out[0] = 0.0
    return (out,)


def _bw_softmax_xent(rec, g):
    probs, labels = rec.ctx["probs"], rec.ctx["labels"]
    d = probs.copy()
    d[np.arange(len(labels)), labels] -= 1.0
    return (d * (float(g) / len(labels)),)


BACKWARD_RULES: dict[str, Callable] = {
    "add": _bw_add,
    "sub": _bw_sub,
    "mul": _bw_mul,
    "scale": _bw_scale,
    "sigmoid": _bw_sigmoid,
    "tanh": _bw_tanh,
    "log1p": _bw_log1p,
    "abs": _bw_abs,
    "matmul": _bw_matmul,
    "concat": _bw_concat,
    "reshape": _bw_reshape,
    "select": _bw_select,
    "gather_rows": _bw_gather_rows,
    "row_softmax": _bw_row_softmax,
    "sum_all": _bw_sum_all,
    "mean_all": _bw_mean_all,
    "sq_norm": _bw_sq_norm,
    "softmax_xent": _bw_softmax_xent,
}


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into the ``grad`` of every leaf on ``tape``.

    Leaf gradients add onto whatever is already there; zero them between
    optimizer steps.
    """
    if tape.consumed:
        raise ContractError("tape already replayed; record a fresh tape")
    if loss.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    tape.consumed = True
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=DTYPE)}
    if not loss._produced:
        _accumulate_leaf(tape, loss, grads.pop(id(loss)))
        return
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.out), None)
        if g is None:
            continue
        in_grads = BACKWARD_RULES[rec.op](rec, g)
        for t, gi in zip(rec.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if t._produced:
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
            else:
                _accumulate_leaf(tape, t, gi)
    tape.records.clear()


def _accumulate_leaf(tape: Tape, t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros(t.shape, dtype=DTYPE)
    t.grad += np.asarray(g, dtype=DTYPE).reshape(t.shape)
    tape.contributions[id(t)] = tape.contributions.get(id(t), 0) + 1


# ---------------------------------------------------------------------------
# finite-difference checking


def numeric_gradient(f: Callable[[Tensor], Tensor], theta: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central differences of ``f`` with respect to every coordinate of ``theta``."""
    flat = theta.values.reshape(-1)
    out = np.zeros(flat.size, dtype=DTYPE)
    with no_tape():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = _scalar(f(theta))
            flat[i] = orig - eps
            fm = _scalar(f(theta))
            flat[i] = orig
            out[i] = (fp - fm) / (2.0 * eps)
    return out.reshape(theta.shape)


def analytic_gradient(f: Callable[[Tensor], Tensor], theta: Tensor) -> np.ndarray:
    saved = theta.grad
    theta.grad = None
    was = theta.requires_grad
    theta.requires_grad = True
    try:
        with Tape() as tape:
            loss = f(theta)
        backward(tape, loss)
        g = theta.grad if theta.grad is not None else np.zeros(theta.shape)
    finally:
        theta.grad = saved
        theta.requires_grad = was
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max over coordinates of ``|a - n| / (|a| + |n| + 1e-12)``."""
    a = np.asarray(analytic, dtype=DTYPE).reshape(-1)
    n = np.asarray(numeric, dtype=DTYPE).reshape(-1)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / (np.abs(a) + np.abs(n) + 1e-12)))


def grad_check(f: Callable[[Tensor], Tensor], theta: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between the tape gradient and central differences."""
    return relative_error(analytic_gradient(f, theta), numeric_gradient(f, theta, eps))


def _scalar(t) -> float:
    v = float(t.item() if isinstance(t, Tensor) else t)
    if not np.isfinite(v):
        raise NumericError("function value is not finite during finite differencing")
    return v
