"""Minimal reverse-mode autodiff over numpy arrays.

Only the ops the sequence and label models need. Each op records closures
that map the output gradient to parent gradients; ``Tensor.backward`` walks
the graph in reverse topological order. Wrap inference in ``no_grad()`` to
skip graph construction entirely.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

from . import backend

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fns")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._grad_fns = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)
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
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(topo):
            if node.grad is None:
                continue
            for parent, fn in zip(node._parents, node._grad_fns):
                if not parent.requires_grad:
                    continue
                g = fn(node.grad)
                parent.grad = g if parent.grad is None else parent.grad + g

    # operators ------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, -other if isinstance(other, Tensor) else -np.asarray(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported")
        return scale(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def parameter(data) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True)


def _make(data, parents, grad_fns) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._grad_fns = tuple(grad_fns)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce `grad` back to `shape` by summing broadcast axes."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _ensure(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


# ops -----------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    return _make(a.data + b.data, (a, b), (
        lambda g: _unbroadcast(g, a.data.shape),
        lambda g: _unbroadcast(g, b.data.shape),
    ))


def mul(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    return _make(a.data * b.data, (a, b), (
        lambda g: _unbroadcast(g * b.data, a.data.shape),
        lambda g: _unbroadcast(g * a.data, b.data.shape),
    ))


def scale(a: Tensor, s: float) -> Tensor:
    return _make(a.data * s, (a,), (lambda g: g * s,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _ensure(a), _ensure(b)

    def da(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        return _unbroadcast(ga, a.data.shape)

    def db(g):
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(gb, b.data.shape)

    return _make(np.matmul(a.data, b.data), (a, b), (da, db))


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ weight + bias over the last axis; x may have any leading shape.
    Runs as one 2D GEMM each way, which is much faster than the generic
    batched-matmul path for (batch, time, dim) inputs."""
    shape = x.data.shape
    x2 = x.data.reshape(-1, shape[-1])
    out = x2 @ weight.data + bias.data

    def dx(g):
        g2 = g.reshape(-1, g.shape[-1])
        return (g2 @ weight.data.T).reshape(shape)

    def dw(g):
        return x2.T @ g.reshape(-1, g.shape[-1])

    def db(g):
        return g.reshape(-1, g.shape[-1]).sum(axis=0)

    return _make(out.reshape(shape[:-1] + (weight.data.shape[1],)),
                 (x, weight, bias), (dx, dw, db))


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.data.shape
    return _make(a.data.reshape(shape), (a,), (lambda g: g.reshape(orig),))


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), (lambda g: np.transpose(g, inv),))


def _is_basic_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, np.integer, slice, type(None), type(Ellipsis)))
               for p in parts)


def getitem(a: Tensor, idx) -> Tensor:
    basic = _is_basic_index(idx)

    def da(g):
        out = np.zeros_like(a.data)
        if basic:
            out[idx] += g
        else:
            np.add.at(out, idx, g)
        return out

    return _make(a.data[idx], (a,), (da,))


def concat(tensors, axis: int) -> Tensor:
    tensors = [_ensure(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def make_fn(i):
        sl = [slice(None)] * tensors[i].data.ndim
        sl[axis] = slice(offsets[i], offsets[i + 1])
        sl = tuple(sl)
        return lambda g: g[sl]

    return _make(np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), tuple(make_fn(i) for i in range(len(tensors))))


def broadcast_to(a: Tensor, shape) -> Tensor:
    return _make(np.broadcast_to(a.data, shape), (a,),
                 (lambda g: _unbroadcast(g, a.data.shape),))


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)

    def dw(g):
        out = np.zeros_like(weight.data)
        np.add.at(out, ids.ravel(), g.reshape(-1, weight.data.shape[1]))
        return out

    return _make(weight.data[ids], (weight,), (dw,))


def relu(a: Tensor) -> Tensor:
    shape = a.data.shape
    x2 = a.data.reshape(-1, shape[-1])
    y = backend.relu_fwd(x2).reshape(shape)
    return _make(y, (a,), (
        lambda g: backend.relu_bwd(g.reshape(-1, shape[-1]), x2).reshape(shape),
    ))


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float) -> Tensor:
    shape = a.data.shape
    x2 = a.data.reshape(-1, shape[-1])
    y, mean, rstd = backend.layernorm_fwd(x2, gamma.data, beta.data, eps)

    def da(g):
        dx, _, _ = backend.layernorm_bwd(g.reshape(-1, shape[-1]), x2, gamma.data, mean, rstd)
        return dx.reshape(shape)

    def dgamma(g):
        _, dg, _ = backend.layernorm_bwd(g.reshape(-1, shape[-1]), x2, gamma.data, mean, rstd)
        return dg

    def dbeta(g):
        return g.reshape(-1, shape[-1]).sum(axis=0)

    return _make(y.reshape(shape), (a, gamma, beta), (da, dgamma, dbeta))


def softmax(a: Tensor) -> Tensor:
    shape = a.data.shape
    y2 = backend.softmax_fwd(a.data.reshape(-1, shape[-1]))
    y = y2.reshape(shape)
    return _make(y, (a,), (
        lambda g: backend.softmax_bwd(g.reshape(-1, shape[-1]), y2).reshape(shape),
    ))


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of integer labels over all rows (logits is (M, C))."""
    labels = np.asarray(labels)
    losses, probs = backend.softmax_xent_fwd(logits.data, labels)
    m = losses.shape[0]
    out = np.asarray(losses.mean(), dtype=logits.data.dtype)

    def dl(g):
        dlosses = np.full(m, float(g) / m, dtype=logits.data.dtype)
        return backend.softmax_xent_bwd(probs, labels, dlosses)

    return _make(out, (logits,), (dl,))


def grad_reversal(a: Tensor, lam: float) -> Tensor:
    """Identity forward; multiplies the upstream gradient by -lam on the way back."""
    return _make(a.data, (a,), (lambda g: g * (-lam),))


def mean(a: Tensor) -> Tensor:
    n = a.data.size

    def da(g):
        return np.full_like(a.data, float(g) / n)

    return _make(np.asarray(a.data.mean(), dtype=a.data.dtype), (a,), (da,))


def sqrt_dim_scale(a: Tensor, dim: int) -> Tensor:
    return scale(a, 1.0 / math.sqrt(dim))
