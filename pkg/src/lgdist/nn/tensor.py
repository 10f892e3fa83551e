"""Minimal reverse-mode autodiff over numpy, covering exactly the ops this
project's models need.

Arrays keep whatever float dtype they are given (training runs float32,
gradient checks run float64). Explicit reductions (sum, mean, the layer-norm
statistics, softmax normalizers) accumulate in float64 before casting back.
"""

from __future__ import annotations

import numpy as np

from lgdist.errors import ShapeError

_GRAD_ENABLED = True


class no_grad:
    """Context manager that skips graph construction (eval / sampling paths)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, seed=None):
        """Reverse-mode sweep from this (typically scalar) node."""
        topo: list[Tensor] = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        if seed is None:
            seed = np.ones_like(self.data)
        self.grad = np.asarray(seed, dtype=self.data.dtype)
        for node in reversed(topo):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = g.astype(parent.data.dtype, copy=False)
                else:
                    parent.grad = parent.grad + g.astype(parent.data.dtype, copy=False)

    # operator sugar
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

    def __getitem__(self, idx):
        return index(self, idx)


def lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _node(data, parents, backward):
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=tuple(parents), backward=backward)
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum `grad` down to `shape` after numpy broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _f64_sum(x: np.ndarray, axis=None, keepdims=False) -> np.ndarray:
    return np.sum(x, axis=axis, keepdims=keepdims, dtype=np.float64)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b):
    if _is_scalar(b):
        a = lift(a)
        return _node(a.data + b, (a,), lambda g: (g,))
    if _is_scalar(a):
        return add(b, a)
    a, b = lift(a), lift(b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(out, (a, b), backward)


def sub(a, b):
    if _is_scalar(b):
        return add(a, -b)
    if _is_scalar(a):
        b = lift(b)
        return _node(a - b.data, (b,), lambda g: (-g,))
    a, b = lift(a), lift(b)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(out, (a, b), backward)


def mul(a, b):
    if _is_scalar(b):
        a = lift(a)
        return _node(a.data * b, (a,), lambda g: (g * b,))
    if _is_scalar(a):
        return mul(b, a)
    a, b = lift(a), lift(b)
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(out, (a, b), backward)


def square(a):
    a = lift(a)
    out = a.data * a.data

    def backward(g):
        return (2.0 * g * a.data,)

    return _node(out, (a,), backward)


def tanh(a):
    a = lift(a)
    out = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _node(out, (a,), backward)


def sigmoid_(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def silu(a):
    a = lift(a)
    s = sigmoid_(a.data)
    out = a.data * s

    def backward(g):
        return (g * s * (1.0 + a.data * (1.0 - s)),)

    return _node(out, (a,), backward)


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(a):
    """tanh-approximation GELU."""
    a = lift(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
        return (g * d,)

    return _node(out, (a,), backward)


# ---------------------------------------------------------------------------
# contractions and reductions
# ---------------------------------------------------------------------------


def matmul(a, b):
    a, b = lift(a), lift(b)
    out = a.data @ b.data

    def backward(g):
        bt = np.swapaxes(b.data, -1, -2)
        at = np.swapaxes(a.data, -1, -2)
        return _unbroadcast(g @ bt, a.shape), _unbroadcast(at @ g, b.shape)

    return _node(out, (a, b), backward)


def tsum(a, axis=None, keepdims=False):
    a = lift(a)
    out = _f64_sum(a.data, axis=axis, keepdims=keepdims).astype(a.dtype, copy=False)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=False),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).astype(a.dtype, copy=False),)

    return _node(out, (a,), backward)


def tmean(a, axis=None, keepdims=False):
    a = lift(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def softmax(a, axis=-1):
    a = lift(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    denom = _f64_sum(e, axis=axis, keepdims=True)
    out = (e / denom).astype(a.dtype, copy=False)

    def backward(g):
        dot = _f64_sum(g * out, axis=axis, keepdims=True)
        return ((out * (g - dot)).astype(a.dtype, copy=False),)

    return _node(out, (a,), backward)


def normalize(a, eps=1e-5):
    """Zero-mean unit-variance normalization over the last axis (layer-norm core)."""
    a = lift(a)
    x = a.data
    n = x.shape[-1]
    mu = _f64_sum(x, axis=-1, keepdims=True) / n
    centered = x - mu
    var = _f64_sum(centered * centered, axis=-1, keepdims=True) / n
    inv = 1.0 / np.sqrt(var + eps)
    out = (centered * inv).astype(a.dtype, copy=False)

    def backward(g):
        g64 = g.astype(np.float64, copy=False)
        mean_g = _f64_sum(g64, axis=-1, keepdims=True) / n
        mean_gy = _f64_sum(g64 * out, axis=-1, keepdims=True) / n
        dx = inv * (g64 - mean_g - out * mean_gy)
        return (dx.astype(a.dtype, copy=False),)

    return _node(out, (a,), backward)


# ---------------------------------------------------------------------------
# shape plumbing
# ---------------------------------------------------------------------------


def reshape(a, shape):
    a = lift(a)
    out = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(a.shape),)

    return _node(out, (a,), backward)


def transpose(a, axes):
    a = lift(a)
    out = a.data.transpose(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inv),)

    return _node(out, (a,), backward)


def concat(tensors, axis=-1):
    tensors = [lift(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(out, tuple(tensors), backward)


def index(a, idx):
    """Basic (slice/int) indexing; gradient scatters back into zeros."""
    a = lift(a)
    out = a.data[idx]

    def backward(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return _node(out, (a,), backward)


def mse(pred, target):
    """Mean squared error; target is treated as a constant."""
    pred = lift(pred)
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.shape != t.shape:
        raise ShapeError(f"mse shapes differ: {pred.shape} vs {t.shape}")
    diff = sub(pred, Tensor(t))
    return tmean(square(diff))
