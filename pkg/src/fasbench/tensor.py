"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array and, while gradient recording is enabled,
remembers the operation that produced it. ``backward(loss)`` replays the
recorded operations in reverse topological order and accumulates gradients
into every reachable tensor with ``requires_grad``.

Broadcasting is deliberately restricted: a binary operation accepts two
operands only when the result shape equals one operand's shape exactly
(bias-add and keepdims-reduction patterns). Mutual broadcasting such as
``(3,1) * (1,4)`` is rejected so every backward rule stays auditable.

Double precision is the default dtype; training code may build float32
tensors, but all gradient checking is only meaningful in float64.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, ShapeError

_seq_counter = itertools.count()
_grad_enabled = True
_sequential_matmul = False


class no_grad:
    """Context manager that disables graph recording (evaluation mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def is_grad_enabled() -> bool:
    return _grad_enabled


def set_sequential_matmul(flag: bool) -> None:
    """Route matmul through einsum's fixed sequential reduction order.

    BLAS-backed ``np.matmul`` is deterministic for a fixed machine/thread
    configuration; the einsum path removes the thread-count dependency at
    some speed cost.
    """
    global _sequential_matmul
    _sequential_matmul = bool(flag)


class Tensor:
    """N-dimensional array with an optional gradient slot."""

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._inputs: tuple[Tensor, ...] = ()
        self._vjp: Optional[Callable[[np.ndarray], tuple]] = None
        self._seq = next(_seq_counter)

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
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, inputs: Sequence["Tensor"], vjp) -> "Tensor":
        out = Tensor(data)
        if _grad_enabled and any(t.requires_grad for t in inputs):
            out.requires_grad = True
            out._inputs = tuple(inputs)
            out._vjp = vjp
        return out

    # -- operators ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, like=self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def backward(self) -> None:
        backward(self)


def _as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _check_broadcast(a_shape, b_shape) -> tuple[int, ...]:
    """Allow broadcasts where the result equals one operand's shape."""
    try:
        out = np.broadcast_shapes(a_shape, b_shape)
    except ValueError:
        raise ShapeError(f"incompatible shapes {a_shape} and {b_shape}") from None
    if out != tuple(a_shape) and out != tuple(b_shape):
        raise ShapeError(
            f"mutual broadcast of {a_shape} and {b_shape} is not supported"
        )
    return out


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes that were broadcast in the forward op."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise binary ops -------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    _check_broadcast(a.shape, b.shape)
    out = a.data + b.data

    def vjp(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return Tensor._make(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    _check_broadcast(a.shape, b.shape)
    out = a.data - b.data

    def vjp(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return Tensor._make(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    _check_broadcast(a.shape, b.shape)
    out = a.data * b.data

    def vjp(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return Tensor._make(out, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    _check_broadcast(a.shape, b.shape)
    out = a.data / b.data

    def vjp(g):
        ga = _reduce_to(g / b.data, a.shape)
        gb = _reduce_to(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return Tensor._make(out, (a, b), vjp)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return Tensor._make(-a.data, (a,), lambda g: (-g,))


# -- elementwise unary ops --------------------------------------------------


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    return Tensor._make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out = np.sqrt(a.data)
    return Tensor._make(out, (a,), lambda g: (g * (0.5 / out),))


def power(a, p: float) -> Tensor:
    a = _as_tensor(a)
    p = float(p)
    out = a.data**p

    def vjp(g):
        return (g * p * a.data ** (p - 1.0),)

    return Tensor._make(out, (a,), vjp)


def clip_min(a, floor: float) -> Tensor:
    """Elementwise max(a, floor); zero gradient where the floor is active."""
    a = _as_tensor(a)
    out = np.maximum(a.data, floor)

    def vjp(g):
        return (g * (a.data > floor),)

    return Tensor._make(out, (a,), vjp)


_GELU_C = float(np.sqrt(2.0 / np.pi))
_GELU_A = 0.044715


def gelu(a) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    a = _as_tensor(a)
    x = a.data
    u = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(u)
    out = 0.5 * x * (1.0 + t)

    def vjp(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)

    return Tensor._make(out, (a,), vjp)


# -- shape ops ---------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = a.data.reshape(shape)
    orig = a.shape
    return Tensor._make(out, (a,), lambda g: (g.reshape(orig),))


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    out = a.data.transpose(axes)
    if axes is None:
        inv = None
    else:
        inv = tuple(np.argsort(axes))
    return Tensor._make(out, (a,), lambda g: (g.transpose(inv),))


def broadcast_to(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = np.broadcast_to(a.data, shape)
    orig = a.shape
    return Tensor._make(np.ascontiguousarray(out), (a,), lambda g: (_reduce_to(g, orig),))


def getitem(a, idx) -> Tensor:
    a = _as_tensor(a)
    out = a.data[idx]

    def vjp(g):
        z = np.zeros_like(a.data)
        np.add.at(z, idx, g)
        return (z,)

    return Tensor._make(np.array(out, copy=True), (a,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(out, tensors, vjp)


# -- reductions ---------------------------------------------------------------


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    return Tensor._make(np.asarray(out), (a,), vjp)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    if axis is None:
        count = a.size
    else:
        count = a.shape[axis] if isinstance(axis, int) else int(
            np.prod([a.shape[ax] for ax in axis])
        )
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# -- linear algebra ------------------------------------------------------------


def _matmul_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if _sequential_matmul:
        return np.einsum("...ij,...jk->...ik", x, y)
    return np.matmul(x, y)


def matmul(a, b) -> Tensor:
    """Matrix product of two 2-D tensors or two equally-batched stacks."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs 2-D or stacked operands, got {a.shape} @ {b.shape}")
    if a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dimensions differ: {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = _matmul_kernel(a.data, b.data)

    def vjp(g):
        ga = _matmul_kernel(g, np.swapaxes(b.data, -1, -2))
        gb = _matmul_kernel(np.swapaxes(a.data, -1, -2), g)
        return ga, gb

    return Tensor._make(out, (a, b), vjp)


# -- softmax family -------------------------------------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    """Probability simplex along ``axis``; max-subtracted for stability."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return Tensor._make(out, (a,), vjp)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def vjp(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out, (a,), vjp)


def layer_norm(x, gain, bias, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine.

    Composed from primitive ops so the backward pass comes off the tape.
    """
    if eps <= 0:
        raise ContractError("layer_norm eps must be positive")
    x = _as_tensor(x)
    mu = tmean(x, axis=-1, keepdims=True)
    xc = sub(x, mu)
    var = tmean(mul(xc, xc), axis=-1, keepdims=True)
    xn = div(xc, sqrt(add(var, eps)))
    return add(mul(xn, gain), bias)


# -- backward engine -------------------------------------------------------------


@dataclass
class TapeEntry:
    """One recorded operation: output, inputs, and its backward rule."""

    out: Tensor
    inputs: tuple
    vjp: Callable


class Tape:
    """Operations reachable from a result, in execution (topological) order."""

    def __init__(self, entries: list[TapeEntry]):
        self.entries = entries

    @classmethod
    def trace(cls, result: Tensor) -> "Tape":
        seen: set[int] = set()
        nodes: list[Tensor] = []
        stack = [result]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(t._inputs)
        nodes.sort(key=lambda t: t._seq)
        entries = [
            TapeEntry(t, t._inputs, t._vjp) for t in nodes if t._vjp is not None
        ]
        return cls(entries)

    def backward(self, result: Tensor) -> None:
        adjoint: dict[int, np.ndarray] = {id(result): np.ones_like(result.data)}
        if result._vjp is None and result.requires_grad:
            _accumulate_grad(result, adjoint[id(result)])
        for entry in reversed(self.entries):
            g = adjoint.pop(id(entry.out), None)
            if g is None:
                continue
            if entry.out.requires_grad:
                _accumulate_grad(entry.out, g)
            grads = entry.vjp(g)
            for inp, gi in zip(entry.inputs, grads):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in adjoint:
                    adjoint[key] = adjoint[key] + gi
                else:
                    adjoint[key] = gi
                if inp._vjp is None:
                    _accumulate_grad(inp, gi)


def _accumulate_grad(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=t.data.dtype).reshape(t.shape)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad = t.grad + g


def backward(loss: Tensor) -> None:
    """Populate gradients of every requires_grad tensor reachable from ``loss``.

    Repeated calls without clearing gradients accumulate additively.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    Tape.trace(loss).backward(loss)


# -- verification -------------------------------------------------------------


@dataclass
class FiniteDiffReport:
    """Result of comparing tape gradients against central differences."""

    max_rel_err: float
    max_abs_err: float
    grad: np.ndarray
    fd_grad: np.ndarray

    def ok(self, tol: float) -> bool:
        return self.max_rel_err < tol


def finite_diff_check(
    f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5
) -> FiniteDiffReport:
    """Check the tape gradient of scalar ``f`` with respect to ``x``.

    ``f`` must be deterministic and may close over other tensors; it is
    re-evaluated after in-place perturbations of ``x.data``, so ``x`` can be
    a model parameter embedded in a larger computation. The relative error
    is measured against the infinity norm of the gradient (floored at 1e-8)
    so that near-zero components do not blow up the ratio.
    """
    if x.data.dtype != np.float64:
        raise ContractError("finite_diff_check requires float64 tensors")
    x.grad = None
    y = f(x)
    if y.size != 1:
        raise ContractError("finite_diff_check needs a scalar-valued function")
    backward(y)
    g = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)

    fd = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    fd_flat = fd.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = float(f(x).data)
            flat[i] = orig - h
            lo = float(f(x).data)
            flat[i] = orig
            fd_flat[i] = (hi - lo) / (2.0 * h)

    abs_err = np.abs(g - fd)
    scale = max(np.abs(fd).max(initial=0.0), np.abs(g).max(initial=0.0), 1e-8)
    return FiniteDiffReport(
        max_rel_err=float(abs_err.max(initial=0.0) / scale),
        max_abs_err=float(abs_err.max(initial=0.0)),
        grad=g,
        fd_grad=fd,
    )
