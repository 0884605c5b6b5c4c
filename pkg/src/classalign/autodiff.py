"""Reverse-mode automatic differentiation over dense float64 arrays.

A small deterministic engine, just enough for multilayer perceptrons
trained with minimax objectives. Every tensor wraps a numpy array.
Operations link results to their operands with a backward closure, and
``backward`` on a scalar replays the closures once in reverse
topological order. Leaf gradients accumulate additively; call
``zero_grad`` between steps.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (pure inference)."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


class Tensor:
    """Dense float64 array with optional gradient tracking."""

    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward_fn", "_consumed")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return float(self.values)

    def is_leaf(self) -> bool:
        return self._backward_fn is None

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.values.shape}{flag})"

    # operator sugar; all defer to the module-level primitives
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, negate(other))

    def __rsub__(self, other):
        return add(other, negate(self))

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __truediv__(self, scalar):
        return multiply(self, 1.0 / float(scalar))

    def __neg__(self):
        return negate(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcasting introduced."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if squeeze:
        grad = grad.sum(axis=squeeze, keepdims=True)
    return grad.reshape(shape)


def _result(values: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(values, requires_grad=track)
    if track:
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf.

    The recorded graph under ``loss`` is walked exactly once in reverse
    topological order; a second call on the same loss raises.
    """
    if loss.values.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.values.shape}")
    if loss._consumed:
        raise RuntimeError("backward already called on this loss; the record is consumed")
    if not loss.requires_grad:
        raise RuntimeError("loss does not require grad; nothing to differentiate")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    # intermediate adjoints live in a scratch table so repeated backward
    # passes over shared subgraphs cannot double-count
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    for node in reversed(topo):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf():
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in adjoint:
                adjoint[key] = adjoint[key] + pg
            else:
                adjoint[key] = pg
    loss._consumed = True


# ---------------------------------------------------------------------------
# primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        values = a.values + b.values
    except ValueError:
        raise ValueError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None
    return _result(values, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def multiply(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        values = a.values * b.values
    except ValueError:
        raise ValueError(f"multiply: shapes {a.shape} and {b.shape} do not broadcast") from None

    def bw(g):
        return (_unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape))

    return _result(values, (a, b), bw)


def negate(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.values, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        return (g @ b.values.T, a.values.T @ g)

    return _result(a.values @ b.values, (a, b), bw)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.values > 0.0
    return _result(np.where(mask, a.values, 0.0), (a,), lambda g: (g * mask,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.log(a.values), (a,), lambda g: (g / a.values,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    values = np.exp(a.values)
    return _result(values, (a,), lambda g: (g * values,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    values = 1.0 / (1.0 + np.exp(-np.abs(a.values)))
    values = np.where(a.values >= 0.0, values, 1.0 - values)
    return _result(values, (a,), lambda g: (g * values * (1.0 - values),))


def tensor_sum(a, axis=None) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _result(a.values.sum(axis=axis), (a,), bw)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    return tensor_sum(a, axis=axis) / count


def take(a, key) -> Tensor:
    """Slice or fancy-index; the backward pass scatter-adds into place."""
    a = as_tensor(a)
    values = a.values[key]

    def bw(g):
        buf = np.zeros_like(a.values)
        np.add.at(buf, key, g)
        return (buf,)

    return _result(values, (a,), bw)


def take_per_row(a, columns) -> Tensor:
    """Pick one entry per row of a 2-d tensor: out[i] = a[i, columns[i]]."""
    a = as_tensor(a)
    columns = np.asarray(columns)
    if a.values.ndim != 2 or columns.shape != (a.shape[0],):
        raise ValueError(f"take_per_row: tensor {a.shape} vs columns {columns.shape}")
    return take(a, (np.arange(a.shape[0]), columns))


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-d tensors along axis 0."""
    parts = [as_tensor(p) for p in parts]
    values = np.concatenate([p.values for p in parts], axis=0)
    sizes = [p.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return _result(values, tuple(parts), bw)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    values = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * values).sum(axis=axis, keepdims=True)
        return ((g - inner) * values,)

    return _result(values, (a,), bw)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    values = shifted - lse
    soft = np.exp(values)

    def bw(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return _result(values, (a,), bw)


def logsumexp(a, mask: np.ndarray | None = None, axis: int = -1) -> Tensor:
    """log-sum-exp along ``axis``, optionally restricted to a 0/1 support mask.

    ``mask`` is plain data (no gradient) broadcastable to the tensor shape;
    rows whose support is empty are rejected.
    """
    a = as_tensor(a)
    if mask is None:
        support = np.ones_like(a.values, dtype=bool)
    else:
        support = np.broadcast_to(np.asarray(mask, dtype=bool), a.values.shape)
        if not support.any(axis=axis).all():
            raise ValueError("logsumexp: some rows have an empty support mask")
    masked = np.where(support, a.values, -np.inf)
    high = masked.max(axis=axis, keepdims=True)
    e = np.exp(masked - high)  # excluded entries underflow to exactly 0
    total = e.sum(axis=axis, keepdims=True)
    values = (np.log(total) + high).squeeze(axis)
    soft = e / total

    def bw(g):
        return (np.expand_dims(g, axis) * soft,)

    return _result(values, (a,), bw)


def cross_entropy(logits, labels) -> Tensor:
    """Mean softmax cross-entropy, fused for stability (no explicit log(0))."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.values.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    m, c = logits.shape
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"cross_entropy: label outside [0, {c})")
    shifted = logits.values - logits.values.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    value = -logp[np.arange(m), labels].mean()
    soft = np.exp(logp)

    def bw(g):
        grad = soft.copy()
        grad[np.arange(m), labels] -= 1.0
        return (g * grad / m,)

    return _result(np.float64(value), (logits,), bw)


def binary_cross_entropy_with_logits(logits, targets) -> Tensor:
    """Per-element logistic loss against 0/1 targets, numerically fused."""
    logits = as_tensor(logits)
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != logits.shape:
        raise ValueError(f"bce: logits {logits.shape} vs targets {y.shape}")
    x = logits.values
    values = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))
    s = 1.0 / (1.0 + np.exp(-np.abs(x)))
    s = np.where(x >= 0.0, s, 1.0 - s)

    def bw(g):
        return (g * (s - y),)

    return _result(values, (logits,), bw)


def gradient_reversal(a, coefficient: float) -> Tensor:
    """Identity forward; backward scales the upstream gradient by -coefficient."""
    a = as_tensor(a)
    coefficient = float(coefficient)
    if not coefficient >= 0.0:
        raise ValueError(f"gradient_reversal: coefficient must be >= 0, got {coefficient}")
    return _result(a.values, (a,), lambda g: (-coefficient * g,))
