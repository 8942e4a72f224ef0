"""Minimal reverse-mode differentiation over numpy arrays.

A :class:`Var` wraps an ndarray and, when any input requires a gradient,
records a vector-Jacobian closure.  :func:`backward` walks the recorded
graph in reverse topological order.  Only the ops defined here and in the
model modules (via :func:`record`) are differentiable.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class NonDifferentiableError(RuntimeError):
    pass


class Var:
    __array_priority__ = 100.0

    def __init__(self, value, requires_grad: bool = False, name: str = ""):
        self.value = np.asarray(value)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self.parents: tuple[Var, ...] = ()
        self.vjp: Callable | None = None
        self.op = "leaf"
        self.differentiable = True

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return take(self, idx)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def record(value, parents: Sequence[Var], vjp: Callable, op: str, differentiable: bool = True) -> Var:
    """Create an op output.  ``vjp(g)`` returns one gradient (or None) per parent."""
    out = Var(value)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.vjp = vjp
        out.differentiable = differentiable
    return out


def _toposort(root: Var) -> list[Var]:
    order: list[Var] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Var, grad: np.ndarray | None = None) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every leaf requiring grad."""
    if not root.requires_grad:
        return
    if grad is None:
        grad = np.ones_like(root.value)
    order = _toposort(root)
    grads: dict[int, np.ndarray] = {id(root): grad}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.vjp is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        if not node.differentiable:
            raise NonDifferentiableError(f"op '{node.op}' is not differentiable")
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def grad(loss: Var, wrt: Sequence[Var]) -> list[np.ndarray]:
    for v in wrt:
        v.grad = None
    backward(loss)
    return [np.zeros_like(v.value) if v.grad is None else v.grad for v in wrt]


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return record(a.value + b.value, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return record(a.value - b.value, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return record(a.value * b.value, (a, b),
                  lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
                  "mul")


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.value / b.value

    def vjp(g):
        gb = g / b.value
        return _unbroadcast(gb, a.shape), _unbroadcast(-gb * out, b.shape)

    return record(out, (a, b), vjp, "div")


def exp(x) -> Var:
    x = as_var(x)
    out = np.exp(x.value)
    return record(out, (x,), lambda g: (g * out,), "exp")


def absolute(x) -> Var:
    x = as_var(x)
    return record(np.abs(x.value), (x,), lambda g: (g * np.sign(x.value),), "abs")


def maximum(a, b) -> Var:
    """Elementwise max; ties route the gradient to ``a``."""
    a, b = as_var(a), as_var(b)
    pick_a = a.value >= b.value
    return record(np.where(pick_a, a.value, b.value), (a, b),
                  lambda g: (_unbroadcast(np.where(pick_a, g, 0), a.shape),
                             _unbroadcast(np.where(pick_a, 0, g), b.shape)), "maximum")


def leaky_relu(x, slope: float = 0.01) -> Var:
    x = as_var(x)
    scale = np.where(x.value > 0, 1.0, slope).astype(x.dtype)
    return record(x.value * scale, (x,), lambda g: (g * scale,), "leaky_relu")


# ----------------------------------------------------------------- reductions


def total(x, axis=None, keepdims: bool = False) -> Var:
    x = as_var(x)
    out = x.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return record(out, (x,), vjp, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Var:
    x = as_var(x)
    n = x.value.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return total(x, axis, keepdims) * (1.0 / n)


def masked_mean(x, mask: np.ndarray) -> Var:
    """Mean of ``x`` over entries where ``mask`` is true (mask is constant)."""
    x = as_var(x)
    mask = np.broadcast_to(mask, x.shape)
    n = int(mask.sum())
    if n == 0:
        raise ValueError("empty support: mask selects no entries")
    w = mask.astype(x.dtype) / n
    return record(np.sum(x.value * w), (x,), lambda g: (g * w,), "masked_mean")


# -------------------------------------------------------------------- shaping


def take(x, idx) -> Var:
    """Basic (non-fancy) indexing."""
    x = as_var(x)

    def vjp(g):
        full = np.zeros_like(x.value)
        full[idx] = g
        return (full,)

    return record(x.value[idx], (x,), vjp, "take")


def reshape(x, shape) -> Var:
    x = as_var(x)
    return record(x.value.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def concat(xs: Sequence, axis: int = 0) -> Var:
    xs = [as_var(x) for x in xs]
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return record(np.concatenate([x.value for x in xs], axis=axis), xs,
                  lambda g: tuple(np.split(g, sizes, axis=axis)), "concat")


def stop_gradient(x) -> Var:
    x = as_var(x)
    return Var(x.value)


def argmax(x, axis: int) -> Var:
    """Hard argmax; present in the graph only as a non-differentiable node."""
    x = as_var(x)
    return record(np.argmax(x.value, axis=axis).astype(x.dtype), (x,),
                  lambda g: (None,), "argmax", differentiable=False)
