"""Minimal dense-tensor reverse-mode automatic differentiation over float64
numpy arrays.

Every operation checks its output for NaN/Inf (disable locally with
`finite_checks(False)` if an op is known-hot). Gradients accumulate into
`.grad` across backward calls until `zero_grad` clears them, so two backward
passes without zeroing double the gradients.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from ..errors import NonFiniteError

_FINITE_CHECKS = True
_GRAD_ENABLED = True


@contextmanager
def finite_checks(enabled: bool):
    global _FINITE_CHECKS
    previous = _FINITE_CHECKS
    _FINITE_CHECKS = enabled
    try:
        yield
    finally:
        _FINITE_CHECKS = previous


@contextmanager
def no_grad():
    """Disable graph recording, e.g. while scoring with a frozen model."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def _check_finite(data: np.ndarray, op: str) -> None:
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by op {op!r}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        _check_finite(self.data, "tensor")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Backpropagate from a scalar loss through the recorded graph."""
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar, got shape {self.shape}")
        if self._backward_fn is None and not self._parents:
            raise RuntimeError("backward called on a tensor with no recorded graph; run a forward pass first")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self.accumulate_grad(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # Operator sugar -------------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __pow__(self, k):
        return power(self, k)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def parameter(data, rng: np.random.Generator | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _record(out: Tensor, parents: Sequence[Tensor], backward_fn) -> Tensor:
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes that numpy broadcasting expanded."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# Elementwise arithmetic ----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.data.shape))

    return _record(out, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.data.shape))

    return _record(out, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    return _record(out, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _record(out, (a, b), bw)


def power(a, k: float) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data**k)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g * k * a.data ** (k - 1))

    return _record(out, (a,), bw)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data @ b.data)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.T)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ g)

    return _record(out, (a, b), bw)


def sparse_matmul(m: sparse.csr_matrix, w: Tensor) -> Tensor:
    """Product of a constant sparse matrix with a dense parameter."""
    out = Tensor(m @ w.data)

    def bw(g):
        if w.requires_grad:
            w.accumulate_grad(m.T @ g)

    return _record(out, (w,), bw)


# Activations ----------------------------------------------------------------


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    out = Tensor(y)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g * (1.0 - y * y))

    return _record(out, (a,), bw)


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0))

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g * (a.data > 0.0))

    return _record(out, (a,), bw)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = _stable_sigmoid(np.asarray(a.data, dtype=np.float64))
    out = Tensor(y)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g * y * (1.0 - y))

    return _record(out, (a,), bw)


# Reductions and shape ops ----------------------------------------------------


def t_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def bw(g):
        if a.requires_grad:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a.accumulate_grad(np.broadcast_to(g, a.data.shape).copy())

    return _record(out, (a,), bw)


def t_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(t_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape))

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g.reshape(a.data.shape))

    return _record(out, (a,), bw)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.transpose(axes))
    inverse = np.argsort(axes)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g.transpose(inverse))

    return _record(out, (a,), bw)


def concat(tensors: Iterable[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, start, end in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                slicer = [slice(None)] * g.ndim
                slicer[axis] = slice(start, end)
                t.accumulate_grad(g[tuple(slicer)])

    return _record(out, tuple(tensors), bw)


def masked_max(a, mask: np.ndarray) -> Tensor:
    """Max over axis 1 of a [B, L, C] tensor restricted to mask [B, L].

    Every row must have at least one masked position; ties resolve to the
    earliest position.
    """
    a = as_tensor(a)
    filled = np.where(mask[:, :, None], a.data, -np.inf)
    arg = np.argmax(filled, axis=1)
    out_data = np.take_along_axis(filled, arg[:, None, :], axis=1)[:, 0, :]
    out = Tensor(out_data)

    def bw(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            np.put_along_axis(ga, arg[:, None, :], g[:, None, :], axis=1)
            a.accumulate_grad(ga)

    return _record(out, (a,), bw)


def l2_normalize(a, eps: float = 1e-24) -> Tensor:
    """Row-normalize a [B, D] tensor to unit L2 norm."""
    sq = t_sum(mul(a, a), axis=1, keepdims=True)
    norm = power(add(sq, eps), 0.5)
    return div(a, norm)


def rowwise_dot(a, b) -> Tensor:
    return t_sum(mul(a, b), axis=1)


# Losses ----------------------------------------------------------------------

_CE_CLAMP = 1e-7


def cross_entropy(p: Tensor, targets: np.ndarray, weights: np.ndarray | float = 1.0) -> Tensor:
    """Mean binary cross-entropy of probabilities against {0,1} targets.

    Inputs outside [clamp, 1-clamp] are clamped for the log only; gradients
    are zero in the clamped region.
    """
    p = as_tensor(p)
    targets = np.asarray(targets, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    pc = np.clip(p.data, _CE_CLAMP, 1.0 - _CE_CLAMP)
    samples = weights * -(targets * np.log(pc) + (1.0 - targets) * np.log(1.0 - pc))
    out = Tensor(samples.mean())

    def bw(g):
        if p.requires_grad:
            inside = (p.data > _CE_CLAMP) & (p.data < 1.0 - _CE_CLAMP)
            dp = weights * (pc - targets) / (pc * (1.0 - pc)) * inside
            p.accumulate_grad(g * dp / p.data.size)

    return _record(out, (p,), bw)


def weighted_mse(pred: Tensor, targets: np.ndarray, weights: np.ndarray | float = 1.0) -> Tensor:
    """Mean of per-sample weighted squared errors: w * (y - yhat)^2."""
    pred = as_tensor(pred)
    targets = np.asarray(targets, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    diff = targets - pred.data
    out = Tensor((weights * diff * diff).mean())

    def bw(g):
        if pred.requires_grad:
            pred.accumulate_grad(g * weights * 2.0 * (pred.data - targets) / pred.data.size)

    return _record(out, (pred,), bw)
