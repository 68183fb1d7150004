"""Minimal reverse-mode autodiff over dense float64 arrays.

The primitive set is deliberately small: affine maps, SiLU/tanh, elementwise
add/sub/mul, softmax, reductions and sqrt. That closure covers every training
objective in this package. Noise injection is done by adding a constant
array, so it contributes nothing to gradients by construction.
"""

from __future__ import annotations

import numpy as np

from signet import _backend
from signet.errors import ContractError, DimensionError

__all__ = [
    "Tensor", "constant", "stop_gradient", "affine", "matmul", "silu",
    "tanh", "softmax", "asum", "mean", "sumsq", "sqrt",
]


class Tensor:
    """A dense float64 array with an optional accumulated gradient.

    Gradient accumulation is additive: calling backward twice without
    clearing doubles every gradient buffer.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def backward(self, seed=None):
        """Backpropagate from this node.

        seed is the incoming cotangent; by default this node must be scalar
        and the seed is 1. Passing an explicit seed supports pseudo-gradient
        injection at non-scalar outputs.
        """
        if seed is None:
            if self.data.size != 1:
                raise ContractError(
                    f"backward() without a seed requires a scalar, got shape {self.shape}")
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(seed, dtype=np.float64)
            if seed.shape != self.data.shape:
                raise DimensionError(
                    f"seed shape {seed.shape} != output shape {self.data.shape}")

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        cot = {id(self): seed}
        for node in reversed(order):
            g = cot.pop(id(node), None)
            if g is None:
                continue
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad += g
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = cot.get(id(parent))
                if acc is None:
                    cot[id(parent)] = np.array(pg)
                else:
                    acc += pg

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("division by a Tensor is not a primitive")
        return mul(self, _wrap(1.0 / other))

    def __neg__(self):
        return mul(self, _wrap(-1.0))

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x):
    """A tensor with gradient flow severed (alias used for clarity)."""
    return _wrap(x).detach()


def stop_gradient(t):
    """Identical values, gradient flow severed."""
    return Tensor(t.data) if isinstance(t, Tensor) else Tensor(t)


def _node(data, parents, vjp):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.data.shape) if a.requires_grad else None,
                            _unbroadcast(g, b.data.shape) if b.requires_grad else None))


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.data.shape) if a.requires_grad else None,
                            _unbroadcast(-g, b.data.shape) if b.requires_grad else None))


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
                            _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None))


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul shapes {a.data.shape} @ {b.data.shape}")
    return _node(a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T if a.requires_grad else None,
                            a.data.T @ g if b.requires_grad else None))


def affine(x, w, b):
    """x @ w + b with a fused backward."""
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    if x.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise DimensionError(
            f"affine input width {x.data.shape} incompatible with weight {w.data.shape}")
    return _node(x.data @ w.data + b.data, (x, w, b),
                 lambda g: (g @ w.data.T if x.requires_grad else None,
                            x.data.T @ g if w.requires_grad else None,
                            g.sum(axis=0) if b.requires_grad else None))


def silu(x):
    x = _wrap(x)
    return _node(_backend.silu(x.data), (x,),
                 lambda g: (_backend.silu_grad(x.data, g),))


def tanh(x):
    x = _wrap(x)
    y = _backend.tanh(x.data)
    return _node(y, (x,), lambda g: (_backend.tanh_grad(y, g),))


def softmax(x, axis=-1):
    x = _wrap(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _node(s, (x,), vjp)


def asum(x, axis=None):
    x = _wrap(x)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.data.shape).copy(),)

    return _node(np.sum(x.data, axis=axis), (x,), vjp)


def mean(x, axis=None):
    x = _wrap(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    return asum(x, axis=axis) * (1.0 / n)


def sumsq(x):
    """Sum of squares over all elements (scalar output)."""
    x = _wrap(x)
    flat = x.data.reshape(-1)
    return _node(np.dot(flat, flat), (x,), lambda g: (2.0 * g * x.data,))


def sqrt(x):
    x = _wrap(x)
    y = np.sqrt(x.data)
    return _node(y, (x,), lambda g: (g * (0.5 / np.maximum(y, 1e-300)),))
