"""Dense float tensors with reverse-mode automatic differentiation.

The model code in this package is written against a deliberately small
operation set.  Each operation computes its forward value eagerly with
numpy and, when a :class:`Tape` is active and the result requires a
gradient, records a node on the tape.  Nodes are stored in execution
order, so replaying them in reverse visits every consumer of a value
before its producer and plain accumulation into ``Tensor.grad`` yields
correct reverse-mode gradients, including for shared subexpressions
and tied parameters.

Default precision is float32.  Operations propagate the dtype of their
inputs, and :func:`precision` temporarily switches the dtype used for
newly constructed tensors; gradient-checking code uses this to run the
identical formulas in float64, where central differences are meaningful.

Reductions rely on numpy's fixed row-major traversal, so forward values
are reproducible bit-for-bit for identical inputs on the same platform.
Recording on a tape is not thread-safe; evaluation without a tape is.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy.special import erf

from .errors import ConfigError, ContractError, DegenerateInputError, ShapeError

__all__ = [
    "Tape",
    "Tensor",
    "add",
    "backward",
    "concat",
    "constant",
    "cosine_similarity",
    "cross_entropy",
    "dropout",
    "gather_rows",
    "gelu",
    "layer_norm",
    "logsumexp",
    "matmul",
    "mean",
    "mul",
    "normalize_rows",
    "precision",
    "reduce_sum",
    "reshape",
    "scale",
    "softmax",
    "sub",
    "transpose",
]

_DEFAULT_DTYPE: np.dtype = np.dtype(np.float32)
_TAPE_STACK: list["Tape"] = []

LAYER_NORM_EPS = 1e-5


def default_dtype() -> np.dtype:
    """Return the dtype currently used for newly constructed tensors."""
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily construct new tensors with ``dtype`` (e.g. float64 for gradient checks)."""
    global _DEFAULT_DTYPE
    previous = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype)
    try:
        yield
    finally:
        _DEFAULT_DTYPE = previous


class Tensor:
    """A numpy array plus gradient bookkeeping.

    Attributes:
        data: the forward value, a C-contiguous numpy float array.
        grad: accumulated gradient of the most recent backward pass,
            or ``None`` if the tensor took no part in it.
        requires_grad: whether gradients should flow into this tensor.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        # asarray with order="C" keeps 0-d shapes, unlike ascontiguousarray.
        self.data = np.asarray(data, dtype=dtype if dtype is not None else _DEFAULT_DTYPE, order="C")
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @staticmethod
    def _result(data: np.ndarray, requires_grad: bool) -> "Tensor":
        # Internal constructor for op outputs: keeps the computed dtype.
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = requires_grad
        return out

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
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)


def constant(data, dtype=None) -> Tensor:
    """A tensor that never receives gradients (masks, fixed weights)."""
    return Tensor(data, requires_grad=False, dtype=dtype)


# A node is (output, inputs, backward_fn); backward_fn maps the output
# gradient to one gradient array (or None) per input, in input order.
_BackwardFn = Callable[[np.ndarray], tuple]


class Tape:
    """Ordered record of operations for one backward pass."""

    __slots__ = ("_nodes",)

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], _BackwardFn]] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        popped = _TAPE_STACK.pop()
        if popped is not self:
            raise ContractError("tape stack corrupted: exited a tape that is not innermost")
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward_fn: _BackwardFn) -> None:
    if _TAPE_STACK and out.requires_grad:
        _TAPE_STACK[-1]._nodes.append((out, inputs, backward_fn))


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(tensor) into ``grad`` for every tensor on the tape.

    ``loss`` must be a scalar produced while ``tape`` was active.  Existing
    ``grad`` buffers on leaves are added to, so callers should clear
    parameter gradients between steps.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    loss.grad = np.ones_like(loss.data)
    for out, inputs, backward_fn in reversed(tape._nodes):
        gout = out.grad
        if gout is None:
            continue
        grads = backward_fn(gout)
        for inp, gin in zip(inputs, grads):
            if gin is None or not inp.requires_grad:
                continue
            if gin.shape != inp.data.shape:
                raise ContractError(
                    f"gradient shape {gin.shape} does not match input shape {inp.data.shape}"
                )
            if inp.grad is None:
                inp.grad = np.zeros_like(inp.data)
            inp.grad += gin


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` to undo numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _requires(*tensors: Tensor) -> bool:
    return any(t.requires_grad for t in tensors)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum with numpy broadcasting."""
    out = Tensor._result(a.data + b.data, _requires(a, b))

    def backward_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    _record(out, (a, b), backward_fn)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise difference with numpy broadcasting."""
    out = Tensor._result(a.data - b.data, _requires(a, b))

    def backward_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    _record(out, (a, b), backward_fn)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    out = Tensor._result(a.data * b.data, _requires(a, b))

    def backward_fn(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    _record(out, (a, b), backward_fn)
    return out


def scale(a: Tensor, factor: float) -> Tensor:
    """Multiply by a python scalar (no gradient for the scalar)."""
    f = a.data.dtype.type(factor)
    out = Tensor._result(a.data * f, a.requires_grad)

    def backward_fn(g):
        return (g * f,)

    _record(out, (a,), backward_fn)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; stacked leading dimensions follow numpy broadcasting."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul expects at least 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    out = Tensor._result(a.data @ b.data, _requires(a, b))

    def backward_fn(g):
        ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.data.shape)
        gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.data.shape)
        return ga, gb

    _record(out, (a, b), backward_fn)
    return out


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    """Permute axes."""
    axes = tuple(axes)
    out = Tensor._result(np.ascontiguousarray(a.data.transpose(axes)), a.requires_grad)
    inverse = tuple(np.argsort(axes))

    def backward_fn(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    _record(out, (a,), backward_fn)
    return out


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Row-major reshape."""
    shape = tuple(shape)
    out = Tensor._result(a.data.reshape(shape), a.requires_grad)
    original = a.data.shape

    def backward_fn(g):
        return (g.reshape(original),)

    _record(out, (a,), backward_fn)
    return out


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    """Concatenate along ``axis``."""
    if not parts:
        raise ShapeError("concat of an empty sequence")
    data = np.concatenate([p.data for p in parts], axis=axis)
    out = Tensor._result(data, _requires(*parts))
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward_fn(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=axis))

    _record(out, tuple(parts), backward_fn)
    return out


def gather_rows(table: Tensor, ids) -> Tensor:
    """Select rows ``table[ids]``; ids may have any shape, output gains a trailing row dim.

    Gradients scatter-add back into the table, so repeated ids accumulate.
    """
    idx = np.asarray(ids, dtype=np.intp)
    n = table.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeError(f"row index out of range for table with {n} rows")
    out = Tensor._result(np.ascontiguousarray(table.data[idx]), table.requires_grad)

    def backward_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    _record(out, (table,), backward_fn)
    return out


def reduce_sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Sum over ``axis`` (all axes when None)."""
    out = Tensor._result(a.data.sum(axis=axis, keepdims=keepdims), a.requires_grad)
    shape = a.data.shape

    def backward_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    _record(out, (a,), backward_fn)
    return out


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Arithmetic mean over ``axis`` (all axes when None)."""
    count = a.data.size if axis is None else a.data.shape[axis]
    if count == 0:
        raise DegenerateInputError("mean over an empty axis")
    out = Tensor._result(a.data.mean(axis=axis, keepdims=keepdims), a.requires_grad)
    shape = a.data.shape
    inv = a.data.dtype.type(1.0 / count)

    def backward_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g * inv, shape).copy(),)

    _record(out, (a,), backward_fn)
    return out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis``; rows sum to one."""
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor._result(y, a.requires_grad)

    def backward_fn(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner),)

    _record(out, (a,), backward_fn)
    return out


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    """Stable log-sum-exp along ``axis`` (axis is removed from the result)."""
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out_data = np.asarray(np.squeeze(np.log(s) + m, axis=axis), order="C")
    out = Tensor._result(out_data, a.requires_grad)
    soft = e / s

    def backward_fn(g):
        return (soft * np.expand_dims(g, axis),)

    _record(out, (a,), backward_fn)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then apply gain and bias.

    Uses population variance with ``eps`` added under the square root, so a
    constant row maps to the bias vector rather than dividing by zero.
    """
    if gain.data.shape != x.data.shape[-1:] or bias.data.shape != x.data.shape[-1:]:
        raise ShapeError(
            f"layer_norm gain/bias must have shape {x.data.shape[-1:]}, "
            f"got {gain.data.shape} and {bias.data.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = centered * inv
    out = Tensor._result(xhat * gain.data + bias.data, _requires(x, gain, bias))
    lead = tuple(range(x.data.ndim - 1))

    def backward_fn(g):
        ggain = (g * xhat).sum(axis=lead) if lead else (g * xhat)
        gbias = g.sum(axis=lead) if lead else g.copy()
        gh = g * gain.data
        gx = inv * (
            gh
            - gh.mean(axis=-1, keepdims=True)
            - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, ggain, gbias

    _record(out, (x, gain, bias), backward_fn)
    return out


_SQRT2 = float(np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian error linear unit, ``x * Phi(x)`` with the normal CDF."""
    cdf = 0.5 * (1.0 + erf(x.data / x.data.dtype.type(_SQRT2)))
    out = Tensor._result(x.data * cdf, x.requires_grad)

    def backward_fn(g):
        pdf = np.exp(-0.5 * x.data * x.data) * x.data.dtype.type(_INV_SQRT_2PI)
        return (g * (cdf + x.data * pdf),)

    _record(out, (x,), backward_fn)
    return out


def normalize_rows(x: Tensor) -> Tensor:
    """Scale each row (last axis) to unit Euclidean norm."""
    norms = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    if np.any(norms == 0.0):
        raise DegenerateInputError("cannot normalize a zero-norm row")
    y = x.data / norms
    out = Tensor._result(y, x.requires_grad)

    def backward_fn(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        return ((g - inner * y) / norms,)

    _record(out, (x,), backward_fn)
    return out


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Cosine of the angle between two vectors, differentiable in both.

    Scale-invariant: multiplying either input by a positive scalar leaves
    the value unchanged.  Zero-norm inputs are rejected.
    """
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"cosine_similarity expects two equal-length vectors, got {a.shape} and {b.shape}")
    na = float(np.sqrt(np.dot(a.data, a.data)))
    nb = float(np.sqrt(np.dot(b.data, b.data)))
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine similarity of a zero-norm vector is undefined")
    sim = np.dot(a.data, b.data) / (na * nb)
    out = Tensor._result(np.asarray(sim, dtype=a.data.dtype), _requires(a, b))

    def backward_fn(g):
        ga = g * (b.data / (na * nb) - (sim / (na * na)) * a.data)
        gb = g * (a.data / (na * nb) - (sim / (nb * nb)) * b.data)
        return ga.astype(a.data.dtype, copy=False), gb.astype(b.data.dtype, copy=False)

    _record(out, (a, b), backward_fn)
    return out


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under row softmaxes."""
    idx = np.asarray(targets, dtype=np.intp)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects 2-d logits, got {logits.shape}")
    n, k = logits.shape
    if idx.shape != (n,):
        raise ShapeError(f"cross_entropy expects {n} targets, got shape {idx.shape}")
    if n == 0:
        raise DegenerateInputError("cross_entropy over zero rows")
    if idx.size and (idx.min() < 0 or idx.max() >= k):
        raise ShapeError(f"target class out of range for {k} classes")
    m = logits.data.max(axis=1, keepdims=True)
    z = logits.data - m
    lse = np.log(np.exp(z).sum(axis=1)) + m[:, 0]
    nll = lse - logits.data[np.arange(n), idx]
    out = Tensor._result(np.asarray(nll.mean(), dtype=logits.data.dtype), logits.requires_grad)

    def backward_fn(g):
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), idx] -= 1.0
        return (p * (g / logits.data.dtype.type(n)),)

    _record(out, (logits,), backward_fn)
    return out


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero entries with probability ``rate``, rescale the rest.

    Intended for training mode only; evaluation code should simply not call it.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype)
    keep /= x.data.dtype.type(1.0 - rate)
    out = Tensor._result(x.data * keep, x.requires_grad)

    def backward_fn(g):
        return (g * keep,)

    _record(out, (x,), backward_fn)
    return out
