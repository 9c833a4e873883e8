"""Reverse-mode automatic differentiation over small numpy arrays.

Every :class:`Var` is appended to the :class:`Tape` that created it, so the
tape order is already a topological order; ``backward`` walks it once in
reverse. Arithmetic follows numpy broadcasting and the adjoints are summed
back to each operand's shape.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class Tape:
    def __init__(self):
        self.nodes: list[Var] = []

    def var(self, value) -> "Var":
        """Register a leaf carrying ``value``."""
        return Var(np.array(value, dtype=float), self, ())

    def constant(self, value) -> np.ndarray:
        return np.asarray(value, dtype=float)

    def backward(self, out: "Var", seed=None) -> None:
        if out.tape is not self:
            raise ValueError("output does not belong to this tape")
        for node in self.nodes:
            node.grad = None
        if seed is None:
            if out.value.size != 1:
                raise ValueError("backward from a non-scalar needs an explicit seed")
            seed = np.ones_like(out.value)
        out.grad = np.asarray(seed, dtype=float).reshape(out.value.shape).copy()
        stop = out.index
        for node in reversed(self.nodes[: stop + 1]):
            if node.grad is None or not node.parents:
                continue
            for parent, vjp in node.parents:
                contrib = vjp(node.grad)
                if contrib is None:
                    continue
                if parent.grad is None:
                    parent.grad = np.array(contrib, dtype=float).reshape(parent.value.shape)
                else:
                    parent.grad = parent.grad + contrib


class Var:
    """A value recorded on a tape together with local pullbacks to its parents."""

    __array_ufunc__ = None  # make numpy defer to our reflected operators
    __slots__ = ("value", "tape", "parents", "grad", "index")

    def __init__(self, value: np.ndarray, tape: Tape, parents):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.grad = None
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    shape = property(lambda self: self.value.shape)
    ndim = property(lambda self: self.value.ndim)

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

    def __len__(self):
        return len(self.value)

    # arithmetic ---------------------------------------------------------
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return add(self, neg(o))

    def __rsub__(self, o):
        return add(o, neg(self))

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return mul(self, reciprocal(o))

    def __rtruediv__(self, o):
        return mul(o, reciprocal(self))

    def __neg__(self):
        return neg(self)

    def __pow__(self, k):
        return power(self, k)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)

    def sum(self, axis=None):
        return sum_(self, axis)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


def _tape_of(*xs) -> Tape | None:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _val(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _node(value, pairs) -> Var:
    tape = _tape_of(*(p for p, _ in pairs))
    parents = tuple((p, f) for p, f in pairs if isinstance(p, Var))
    return Var(value, tape, parents)


def custom(inputs: Sequence, value, vjp: Callable) -> Var | np.ndarray:
    """Record a user primitive.

    ``vjp(cot)`` returns one cotangent (or ``None``) per entry of ``inputs``.
    If no input is a :class:`Var` the plain value is returned.
    """
    if _tape_of(*inputs) is None:
        return value
    cache = {}

    def pull(k):
        def f(g):
            if "out" not in cache or cache["id"] is not g:
                cache["out"] = vjp(g)
                cache["id"] = g
            return cache["out"][k]

        return f

    return _node(np.asarray(value, dtype=float), [(x, pull(k)) for k, x in enumerate(inputs)])


# primitives ---------------------------------------------------------------
def add(a, b):
    av, bv = _val(a), _val(b)
    out = av + bv
    if _tape_of(a, b) is None:
        return out
    return _node(out, [(a, lambda g: _unbroadcast(g, av.shape)), (b, lambda g: _unbroadcast(g, bv.shape))])


def neg(a):
    if not isinstance(a, Var):
        return -_val(a)
    return _node(-a.value, [(a, lambda g: -g)])


def mul(a, b):
    av, bv = _val(a), _val(b)
    out = av * bv
    if _tape_of(a, b) is None:
        return out
    return _node(
        out,
        [(a, lambda g: _unbroadcast(g * bv, av.shape)), (b, lambda g: _unbroadcast(g * av, bv.shape))],
    )


def reciprocal(a):
    av = _val(a)
    out = 1.0 / av
    if not isinstance(a, Var):
        return out
    return _node(out, [(a, lambda g: -g * out * out)])


def power(a, k: float):
    av = _val(a)
    out = av**k
    if not isinstance(a, Var):
        return out
    return _node(out, [(a, lambda g: g * k * av ** (k - 1))])


def square(a):
    return power(a, 2)


def tanh(a):
    av = _val(a)
    out = np.tanh(av)
    if not isinstance(a, Var):
        return out
    return _node(out, [(a, lambda g: g * (1.0 - out * out))])


def sin(a):
    av = _val(a)
    if not isinstance(a, Var):
        return np.sin(av)
    return _node(np.sin(av), [(a, lambda g: g * np.cos(av))])


def cos(a):
    av = _val(a)
    if not isinstance(a, Var):
        return np.cos(av)
    return _node(np.cos(av), [(a, lambda g: -g * np.sin(av))])


def exp(a):
    av = _val(a)
    out = np.exp(av)
    if not isinstance(a, Var):
        return out
    return _node(out, [(a, lambda g: g * out)])


def relu(a):
    av = _val(a)
    out = np.maximum(av, 0.0)
    if not isinstance(a, Var):
        return out
    return _node(out, [(a, lambda g: g * (av > 0))])


def abs_(a):
    av = _val(a)
    if not isinstance(a, Var):
        return np.abs(av)
    return _node(np.abs(av), [(a, lambda g: g * np.sign(av))])


def sum_(a, axis=None):
    av = _val(a)
    out = np.sum(av, axis=axis)
    if not isinstance(a, Var):
        return out

    def f(g):
        if axis is None:
            return np.broadcast_to(g, av.shape)
        return np.broadcast_to(np.expand_dims(g, axis), av.shape)

    return _node(np.asarray(out), [(a, f)])


def mean(a, axis=None):
    av = _val(a)
    n = av.size if axis is None else av.shape[axis]
    return mul(sum_(a, axis), 1.0 / n)


def reshape(a, shape):
    av = _val(a)
    if not isinstance(a, Var):
        return av.reshape(shape)
    return _node(av.reshape(shape), [(a, lambda g: g.reshape(av.shape))])


def expand_dims(a, axis):
    av = _val(a)
    return reshape(a, np.expand_dims(av, axis).shape)


def swapaxes(a, i, j):
    av = _val(a)
    if not isinstance(a, Var):
        return np.swapaxes(av, i, j)
    return _node(np.swapaxes(av, i, j), [(a, lambda g: np.swapaxes(g, i, j))])


def getitem(a, idx):
    av = _val(a)
    if not isinstance(a, Var):
        return av[idx]

    def f(g):
        out = np.zeros_like(av)
        np.add.at(out, idx, g)
        return out

    return _node(np.asarray(av[idx]), [(a, f)])


def matmul(a, b):
    av, bv = _val(a), _val(b)
    out = av @ bv
    if _tape_of(a, b) is None:
        return out
    a2 = av[None, :] if av.ndim == 1 else av
    b2 = bv[:, None] if bv.ndim == 1 else bv

    def ga(g):
        g2 = g
        if bv.ndim == 1:
            g2 = g2[..., None]
        if av.ndim == 1:
            g2 = g2[..., None, :]
        r = g2 @ np.swapaxes(b2, -1, -2)
        if av.ndim == 1:
            return _unbroadcast(r, (1,) + av.shape).reshape(av.shape)
        return _unbroadcast(r, av.shape)

    def gb(g):
        g2 = g
        if bv.ndim == 1:
            g2 = g2[..., None]
        if av.ndim == 1:
            g2 = g2[..., None, :]
        r = np.swapaxes(a2, -1, -2) @ g2
        if bv.ndim == 1:
            return _unbroadcast(r, bv.shape + (1,)).reshape(bv.shape)
        return _unbroadcast(r, bv.shape)

    return _node(np.asarray(out), [(a, ga), (b, gb)])


def stack(xs: Sequence, axis: int = 0):
    vals = [_val(x) for x in xs]
    out = np.stack(vals, axis=axis)
    if _tape_of(*xs) is None:
        return out
    pairs = []
    for k, x in enumerate(xs):
        pairs.append((x, (lambda k: lambda g: np.take(g, k, axis=axis))(k)))
    return _node(out, pairs)


def concat(xs: Sequence, axis: int = 0):
    vals = [_val(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    if _tape_of(*xs) is None:
        return out
    edges = np.cumsum([0] + [v.shape[axis] for v in vals])
    pairs = []
    for k, x in enumerate(xs):
        sl = (lambda lo, hi: lambda g: np.take(g, np.arange(lo, hi), axis=axis))(edges[k], edges[k + 1])
        pairs.append((x, sl))
    return _node(out, pairs)


def broadcast_to(a, shape):
    av = _val(a)
    if not isinstance(a, Var):
        return np.broadcast_to(av, shape)
    return _node(np.broadcast_to(av, shape).copy(), [(a, lambda g: _unbroadcast(g, av.shape))])


def value(x) -> np.ndarray:
    """Underlying array of ``x`` whether or not it is recorded."""
    return _val(x)


def jacobian(fn: Callable, x) -> np.ndarray:
    """Dense Jacobian of ``fn`` at ``x`` by one reverse pass per output."""
    tape = Tape()
    xv = tape.var(x)
    out = fn(xv)
    if not isinstance(out, Var):
        return np.zeros(np.shape(out) + np.shape(x))
    J = np.zeros(out.value.shape + xv.value.shape)
    for idx in np.ndindex(out.value.shape):
        seed = np.zeros_like(out.value)
        seed[idx] = 1.0
        tape.backward(out, seed)
        if xv.grad is not None:
            J[idx] = xv.grad
    return J
