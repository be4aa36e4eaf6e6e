"""A small reverse-mode differentiation engine over numpy arrays.

Every op records its parents and a closure that pushes the output gradient
back to them. :meth:`Tensor.backward` walks the graph in reverse topological
order. Only what the set networks need is implemented.
"""
from __future__ import annotations

import numpy as np

from . import kernels


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, _parents=(), name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accum(np.ones_like(self.data) if grad is None else grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def zero_grad(self):
        self.grad = None

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward):
    parents = tuple(p for p in parents)
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents), _parents=parents)
    if out.requires_grad:
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))
    return _node(a.data + b.data, (a, b), bw)


def neg(a):
    def bw(g):
        a._accum(-g)
    return _node(-a.data, (a,), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))
    return _node(a.data * b.data, (a, b), bw)


def matmul(a, b):
    """2-D ``a @ b``."""
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)
    return _node(a.data @ b.data, (a, b), bw)


def reshape(a, shape):
    def bw(g):
        a._accum(g.reshape(a.shape))
    return _node(a.data.reshape(shape), (a,), bw)


def absolute(a):
    def bw(g):
        a._accum(g * np.sign(a.data))
    return _node(np.abs(a.data), (a,), bw)


def leaky_relu(a, slope=0.01):
    scale = np.where(a.data > 0, 1.0, slope)

    def bw(g):
        a._accum(g * scale)
    return _node(a.data * scale, (a,), bw)


def sigmoid(a):
    y = np.empty_like(a.data)
    pos = a.data >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    e = np.exp(a.data[~pos])
    y[~pos] = e / (1.0 + e)

    def bw(g):
        a._accum(g * y * (1.0 - y))
    return _node(y, (a,), bw)


def softmax(a, axis=-1):
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        a._accum(y * (g - (g * y).sum(axis=axis, keepdims=True)))
    return _node(y, (a,), bw)


def mean(a, axis=None):
    n = a.data.size if axis is None else a.data.shape[axis]

    def bw(g):
        gg = g if axis is None else np.expand_dims(g, axis)
        a._accum(np.broadcast_to(gg, a.shape) / n)
    return _node(a.data.mean(axis=axis), (a,), bw)


def total(a, axis=None):
    def bw(g):
        gg = g if axis is None else np.expand_dims(g, axis)
        a._accum(np.broadcast_to(gg, a.shape).copy())
    return _node(a.data.sum(axis=axis), (a,), bw)


def histogram(x, mu, w, variant: str, gamma: float = 100.0):
    """Per-feature binned densities: ``(B, n, z) -> (B, z * N)``.

    ``mu`` and ``w`` are ``(z, N)``. The hard variant has a zero derivative
    almost everywhere; its backward passes the threshold straight through,
    so every instance reaches ``mu`` and ``w`` via the exponential (see
    ``_histogram_py``).
    """
    code = kernels.VARIANTS[variant]
    xd = np.ascontiguousarray(x.data)
    md = np.ascontiguousarray(mu.data)
    wd = np.ascontiguousarray(w.data)
    H = kernels.hist_forward(xd, md, wd, code, gamma)
    B, z, N = H.shape

    def bw(g):
        gx, gmu, gw = kernels.hist_backward(xd, md, wd, code, gamma,
                                            np.ascontiguousarray(g.reshape(B, z, N)))
        if x.requires_grad:
            x._accum(gx)
        if variant != "sigmoid":
            if mu.requires_grad:
                mu._accum(gmu)
            if w.requires_grad:
                w._accum(gw)
    return _node(H.reshape(B, z * N), (x, mu, w), bw)


def pool(x, kind: str):
    """Permutation-invariant pooling over the instance axis: ``(B, n, z) -> (B, z)``.

    ``median`` is the lower median (sorted index ``(n - 1) // 2``).
    """
    d = x.data
    B, n, z = d.shape
    if n < 1:
        raise ValueError("cannot pool an empty bag")
    if kind == "avg":
        def bw(g):
            x._accum(np.broadcast_to(g[:, None, :], d.shape) / n)
        return _node(d.mean(axis=1), (x,), bw)
    if kind in ("max", "median"):
        if kind == "max":
            idx = d.argmax(axis=1)
        else:
            idx = np.argsort(d, axis=1, kind="stable")[:, (n - 1) // 2, :]
        bi, ki = np.meshgrid(np.arange(B), np.arange(z), indexing="ij")
        val = d[bi, idx, ki]

        def bw(g):
            gx = np.zeros_like(d)
            gx[bi, idx, ki] = g
            x._accum(gx)
        return _node(val, (x,), bw)
    raise ValueError(f"unknown pooling {kind!r}")
