"""Reverse-mode automatic differentiation over dense 2-D matrices.

Everything is a (rows, cols) float matrix; scalars are [1, 1]. Primitive
applications are recorded on an active `Tape`, and `backward` walks the
records in reverse, accumulating vector-Jacobian products. Sparse matrices
(scipy CSR) appear only as constant left factors of `sparse_dense_matmul`.

Training runs in float32; gradient checking builds the same graphs in
float64 (pass dtype=np.float64 to the Tape and to the leaf constructors).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import (
    EmptySoftmaxRow,
    GCHGNNError,
    NonFiniteValue,
    NonScalarLoss,
    ShapeMismatch,
)

_LEAKY_SLOPE_DEFAULT = 0.2
_NORM_EPS = 1e-12


class Tensor:
    """Dense 2-D value with an optional gradient slot.

    `requires_grad` marks leaves whose gradient is wanted (parameters) and
    propagates to every value computed from them. `tid` is assigned by the
    tape the first time the tensor participates in a recorded op.
    """

    __slots__ = ("value", "grad", "requires_grad", "tid")

    def __init__(self, value: np.ndarray, requires_grad: bool = False):
        value = np.asarray(value)
        if value.ndim != 2:
            raise ShapeMismatch(f"tensors are 2-D, got shape {value.shape}")
        self.value = value
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.tid: int | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape  # type: ignore[return-value]

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ShapeMismatch(f"item() needs a [1,1] tensor, got {self.value.shape}")
        return float(self.value[0, 0])

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.value.shape}, dtype={self.value.dtype}{flag})"


class Parameter(Tensor):
    """Named learnable tensor; always requires grad."""

    __slots__ = ("name",)

    def __init__(self, name: str, value: np.ndarray):
        super().__init__(np.array(value, copy=True), requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class ParameterSet:
    """Ordered registry of uniquely named parameters."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def register(self, param: Parameter) -> Parameter:
        if param.name in self._params:
            raise GCHGNNError(f"parameter {param.name!r} registered twice")
        self._params[param.name] = param
        return param

    def new(self, name: str, spec: str, shape: tuple[int, int], rng: np.random.Generator,
            dtype=np.float32) -> Parameter:
        return self.register(init_parameter(name, spec, shape, rng, dtype=dtype))

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def names(self) -> list[str]:
        return list(self._params)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.value for name, p in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self._params.items():
            if name not in arrays:
                raise GCHGNNError(f"missing array for parameter {name!r}")
            if arrays[name].shape != p.value.shape:
                raise ShapeMismatch(
                    f"parameter {name!r}: stored shape {arrays[name].shape} != {p.value.shape}")
            p.value = arrays[name].astype(p.value.dtype)


@dataclass
class _Record:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    vjp: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


class Tape:
    """Append-only record of primitive applications, in topological order.

    Used as a context manager; ops record themselves on the innermost
    active tape. With no active tape, ops run forward-only.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.records: list[_Record] = []

    @staticmethod
    def _touch(t: Tensor) -> int:
        # ids are process-global so a leaf keeps its identity across tapes
        global _NEXT_TID
        if t.tid is None:
            t.tid = _NEXT_TID
            _NEXT_TID += 1
        return t.tid

    def _record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, vjp) -> None:
        for t in inputs:
            self._touch(t)
        self._touch(output)
        self.records.append(_Record(op, inputs, output, vjp))

    def clear(self) -> None:
        self.records.clear()

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self


_TAPE_STACK: list[Tape] = []
_NEXT_TID = 0


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def constant(value, dtype=None) -> Tensor:
    """Leaf tensor that never receives a gradient."""
    arr = np.asarray(value, dtype=dtype)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    return Tensor(arr)


def _check_finite(value: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(value)):
        raise NonFiniteValue(f"non-finite value produced by {op!r}")


def _apply(op: str, inputs: tuple[Tensor, ...], value: np.ndarray, vjp) -> Tensor:
    _check_finite(value, op)
    out = Tensor(value)
    out.requires_grad = any(t.requires_grad for t in inputs)
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape._record(op, inputs, out, vjp)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if grad.shape == shape:
        return grad
    out = grad
    if shape[0] == 1 and grad.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    if out.shape != shape:
        raise ShapeMismatch(f"cannot unbroadcast {grad.shape} to {shape}")
    return out


def _broadcastable(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return all(x == y or x == 1 or y == 1 for x, y in zip(a, b))


# ---------------------------------------------------------------------------
# primitive catalog
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.value, b.value
    if av.shape[1] != bv.shape[0]:
        raise ShapeMismatch(f"matmul {av.shape} @ {bv.shape}")
    val = av @ bv

    def vjp(g):
        da = g @ bv.T if a.requires_grad else None
        db = av.T @ g if b.requires_grad else None
        return da, db

    return _apply("matmul", (a, b), val, vjp)


def sparse_dense_matmul(s: sp.spmatrix, d: Tensor) -> Tensor:
    """Sparse (constant) times dense; only the dense factor is differentiable."""
    s = s.tocsr()
    if s.shape[1] != d.value.shape[0]:
        raise ShapeMismatch(f"spmm {s.shape} @ {d.value.shape}")
    val = s @ d.value
    st = s.T.tocsr()

    def vjp(g):
        return ((st @ g) if d.requires_grad else None,)

    return _apply("sparse_dense_matmul", (d,), np.asarray(val), vjp)


def _binary(op: str, a: Tensor, b: Tensor, fwd, da_fn, db_fn) -> Tensor:
    if not _broadcastable(a.shape, b.shape):
        raise ShapeMismatch(f"{op} {a.shape} vs {b.shape}")
    val = fwd(a.value, b.value)

    def vjp(g):
        da = _unbroadcast(da_fn(g), a.shape) if a.requires_grad else None
        db = _unbroadcast(db_fn(g), b.shape) if b.requires_grad else None
        return da, db

    return _apply(op, (a, b), val, vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    return _binary("add", a, b, lambda x, y: x + y, lambda g: g, lambda g: g)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _binary("sub", a, b, lambda x, y: x - y, lambda g: g, lambda g: -g)


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.value, b.value
    return _binary("elementwise_mul", a, b, lambda x, y: x * y,
                   lambda g: g * bv, lambda g: g * av)


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def vjp(g):
        return (g * c if a.requires_grad else None,)

    return _apply("scalar_mul", (a,), a.value * c, vjp)


def transpose(a: Tensor) -> Tensor:
    def vjp(g):
        return (g.T if a.requires_grad else None,)

    return _apply("transpose", (a,), a.value.T.copy(), vjp)


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeMismatch("concat_rows of nothing")
    cols = tensors[0].shape[1]
    for t in tensors:
        if t.shape[1] != cols:
            raise ShapeMismatch("concat_rows column mismatch")
    val = np.concatenate([t.value for t in tensors], axis=0)
    splits = np.cumsum([t.shape[0] for t in tensors])[:-1]

    def vjp(g):
        parts = np.split(g, splits, axis=0)
        return tuple(p if t.requires_grad else None for p, t in zip(parts, tensors))

    return _apply("concat_rows", tensors, val, vjp)


def gather_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeMismatch("gather_rows index out of range")
    val = a.value[idx]

    def vjp(g):
        if not a.requires_grad:
            return (None,)
        da = np.zeros_like(a.value)
        np.add.at(da, idx, g)
        return (da,)

    return _apply("gather_rows", (a,), val, vjp)


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def row_softmax(a: Tensor) -> Tensor:
    y = _softmax_rows(a.value)

    def vjp(g):
        if not a.requires_grad:
            return (None,)
        dot = (g * y).sum(axis=1, keepdims=True)
        return (y * (g - dot),)

    return _apply("row_softmax", (a,), y, vjp)


def row_log_softmax(a: Tensor) -> Tensor:
    x = a.value
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    y = shifted - lse
    p = np.exp(y)

    def vjp(g):
        if not a.requires_grad:
            return (None,)
        return (g - p * g.sum(axis=1, keepdims=True),)

    return _apply("row_log_softmax", (a,), y, vjp)


def masked_row_softmax(a: Tensor, mask: np.ndarray, allow_empty_rows: bool = False) -> Tensor:
    """Softmax per row over entries where `mask` is True; masked entries are 0.

    Rows with no unmasked entry raise EmptySoftmaxRow unless
    `allow_empty_rows`, in which case they come out all-zero.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise ShapeMismatch(f"mask {mask.shape} vs tensor {a.shape}")
    row_has = mask.any(axis=1)
    if not allow_empty_rows and not row_has.all():
        raise EmptySoftmaxRow(f"{int((~row_has).sum())} rows fully masked")
    x = np.where(mask, a.value, -np.inf)
    rowmax = np.where(row_has, x.max(axis=1), 0.0)[:, None]
    e = np.where(mask, np.exp(x - rowmax), 0.0)
    denom = e.sum(axis=1, keepdims=True)
    y = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)

    def vjp(g):
        if not a.requires_grad:
            return (None,)
        dot = (g * y).sum(axis=1, keepdims=True)
        return (y * (g - dot),)

    return _apply("masked_row_softmax", (a,), y, vjp)


def masked_row_logsumexp(a: Tensor, mask: np.ndarray) -> Tensor:
    """Per-row log-sum-exp over unmasked entries, returned as [n, 1].

    Every row must have at least one unmasked entry.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise ShapeMismatch(f"mask {mask.shape} vs tensor {a.shape}")
    if not mask.any(axis=1).all():
        raise EmptySoftmaxRow("logsumexp row fully masked")
    x = np.where(mask, a.value, -np.inf)
    rowmax = x.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(x - rowmax), 0.0)
    s = e.sum(axis=1, keepdims=True)
    val = rowmax + np.log(s)
    soft = e / s

    def vjp(g):
        if not a.requires_grad:
            return (None,)
        return (soft * g,)

    return _apply("masked_row_logsumexp", (a,), val, vjp)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.value)

    def vjp(g):
        return (g * (1.0 - y * y) if a.requires_grad else None,)

    return _apply("tanh", (a,), y, vjp)


def elu(a: Tensor) -> Tensor:
    x = a.value
    neg = np.exp(np.minimum(x, 0.0)) - 1.0
    y = np.where(x > 0, x, neg)

    def vjp(g):
        if not a.requires_grad:
            return (None,)
        return (g * np.where(x > 0, 1.0, neg + 1.0),)

    return _apply("elu", (a,), y, vjp)


def leaky_relu(a: Tensor, slope: float = _LEAKY_SLOPE_DEFAULT) -> Tensor:
    x = a.value
    y = np.where(x > 0, x, slope * x)

    def vjp(g):
        if not a.requires_grad:
            return (None,)
        return (g * np.where(x > 0, 1.0, slope),)

    return _apply("leaky_relu", (a,), y, vjp)


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.value)

    def vjp(g):
        return (g * y if a.requires_grad else None,)

    return _apply("exp", (a,), y, vjp)


def log(a: Tensor) -> Tensor:
    x = a.value
    with np.errstate(invalid="ignore", divide="ignore"):
        y = np.log(x)

    def vjp(g):
        return (g / x if a.requires_grad else None,)

    return _apply("log", (a,), y, vjp)


def log_sigmoid(a: Tensor) -> Tensor:
    x = a.value
    y = -np.logaddexp(0.0, -x)
    # d/dx log sigmoid(x) = sigmoid(-x), computed in log space for stability
    dyx = np.exp(-np.logaddexp(0.0, x))

    def vjp(g):
        return (g * dyx if a.requires_grad else None,)

    return _apply("log_sigmoid", (a,), y, vjp)


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)
    x = a.value
    with np.errstate(invalid="ignore"):
        y = np.power(x, p)

    def vjp(g):
        if not a.requires_grad:
            return (None,)
        return (g * p * np.power(x, p - 1.0),)

    return _apply("power", (a,), y, vjp)


def l2_normalize_rows(a: Tensor) -> Tensor:
    x = a.value
    norm = np.sqrt((x * x).sum(axis=1, keepdims=True))
    safe = np.maximum(norm, _NORM_EPS)
    y = x / safe

    def vjp(g):
        if not a.requires_grad:
            return (None,)
        dot = (g * y).sum(axis=1, keepdims=True)
        return ((g - y * dot) / safe,)

    return _apply("l2_normalize_rows", (a,), y, vjp)


def row_sum(a: Tensor) -> Tensor:
    val = a.value.sum(axis=1, keepdims=True)

    def vjp(g):
        if not a.requires_grad:
            return (None,)
        return (np.broadcast_to(g, a.value.shape).copy(),)

    return _apply("row_sum", (a,), val, vjp)


def mean_all(a: Tensor) -> Tensor:
    n = a.value.size
    val = np.array([[a.value.mean()]], dtype=a.value.dtype)

    def vjp(g):
        if not a.requires_grad:
            return (None,)
        return (np.full_like(a.value, g[0, 0] / n),)

    return _apply("mean_all", (a,), val, vjp)


def cosine_similarity_matrix(a: Tensor, b: Tensor) -> Tensor:
    """All-pairs cosine similarity: out[i, j] = cos(a_i, b_j)."""
    if a.shape[1] != b.shape[1]:
        raise ShapeMismatch(f"cosine dims {a.shape} vs {b.shape}")
    na = np.maximum(np.sqrt((a.value ** 2).sum(axis=1, keepdims=True)), _NORM_EPS)
    nb = np.maximum(np.sqrt((b.value ** 2).sum(axis=1, keepdims=True)), _NORM_EPS)
    ah = a.value / na
    bh = b.value / nb
    s = ah @ bh.T

    def vjp(g):
        da = db = None
        if a.requires_grad:
            da = (g @ bh - (g * s).sum(axis=1, keepdims=True) * ah) / na
        if b.requires_grad:
            db = (g.T @ ah - (g * s).sum(axis=0)[:, None] * bh) / nb
        return da, db

    return _apply("cosine_similarity_matrix", (a, b), s, vjp)


# ---------------------------------------------------------------------------
# reverse pass, optimizer, initialization
# ---------------------------------------------------------------------------

def backward(loss: Tensor, params: Iterable[Parameter] | None = None) -> None:
    """Populate `.grad` on every requires-grad leaf reachable from `loss`.

    Gradients are overwritten (not accumulated across calls). Parameters
    passed in `params` that the loss never touched get zero gradients.
    """
    if loss.value.shape != (1, 1):
        raise NonScalarLoss(f"loss has shape {loss.value.shape}")
    tape = active_tape()
    if tape is None:
        raise GCHGNNError("backward() requires an active Tape")
    adjoint: dict[int, np.ndarray] = {}
    touched_leaves: dict[int, Tensor] = {}
    if loss.tid is not None:
        adjoint[loss.tid] = np.ones((1, 1), dtype=loss.value.dtype)
    for rec in reversed(tape.records):
        g = adjoint.get(rec.output.tid)
        if g is None:
            continue
        grads = rec.vjp(g)
        for inp, gi in zip(rec.inputs, grads):
            if gi is None:
                continue
            if inp.tid in adjoint:
                adjoint[inp.tid] = adjoint[inp.tid] + gi
            else:
                adjoint[inp.tid] = gi
            if inp.requires_grad:
                touched_leaves[inp.tid] = inp
    for tid, leaf in touched_leaves.items():
        leaf.grad = adjoint[tid]
    if params is not None:
        for p in params:
            if p.tid is None or p.tid not in adjoint:
                p.grad = np.zeros_like(p.value)


@dataclass
class AdamState:
    """Per-parameter first/second moment accumulators plus step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: Iterable[Parameter], state: AdamState, lr: float = 5e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One standard Adam update; parameters without grads are skipped."""
    state.t += 1
    t = state.t
    for p in params:
        g = p.grad
        if g is None:
            continue
        m = state.m.get(p.name)
        if m is None:
            m = np.zeros_like(p.value)
            state.m[p.name] = m
            state.v[p.name] = np.zeros_like(p.value)
        v = state.v[p.name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        mhat = m / (1.0 - beta1 ** t)
        vhat = v / (1.0 - beta2 ** t)
        p.value = p.value - lr * mhat / (np.sqrt(vhat) + eps)


def init_parameter(name: str, spec: str, shape: tuple[int, int],
                   rng: np.random.Generator | int, dtype=np.float32) -> Parameter:
    """Create a parameter. spec is one of xavier-uniform, zeros, ones."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    rows, cols = shape
    if spec == "zeros":
        value = np.zeros(shape, dtype=dtype)
    elif spec == "ones":
        value = np.ones(shape, dtype=dtype)
    elif spec == "xavier-uniform":
        bound = float(np.sqrt(6.0 / (rows + cols)))
        value = rng.uniform(-bound, bound, size=shape).astype(dtype)
    else:
        raise GCHGNNError(f"unknown init spec {spec!r}")
    return Parameter(name, value)
