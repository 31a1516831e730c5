"""Minimal reverse-mode autodiff over numpy arrays.

Just enough machinery to differentiate the training loss with respect to
the parameter bundle: elementwise arithmetic with broadcasting, exp/log,
axis sums, the two contraction patterns used by correlation/refinement,
and bilinear gathers. Forward computations reuse the exact numpy
expressions of the inference kernels, so values agree bit for bit.
"""

from __future__ import annotations

from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .tensors import ContinuousPoint, bilinear_weights

ArrayLike = Union[np.ndarray, float, int]


class Var:
    """Node in the computation tape."""

    __slots__ = ("value", "grad", "parents", "backward_fn")

    def __init__(
        self,
        value: np.ndarray,
        parents: Tuple["Var", ...] = (),
        backward_fn: Optional[Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]] = None,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.parents = parents
        self.backward_fn = backward_fn

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        return div(self, other)


def as_var(x: Union[Var, ArrayLike]) -> Var:
    if isinstance(x, Var):
        return x
    return Var(np.asarray(x, dtype=np.float64))


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum grad back down to the given broadcasted-from shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)),
    )


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)),
    )


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.value * b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        ),
    )


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.value / b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.value, a.value.shape),
            _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape),
        ),
    )


def exp(a) -> Var:
    a = as_var(a)
    out_value = np.exp(a.value)
    return Var(out_value, (a,), lambda g: (g * out_value,))


def log(a) -> Var:
    a = as_var(a)
    return Var(np.log(a.value), (a,), lambda g: (g / a.value,))


def vsum(a, axis=None, keepdims: bool = False) -> Var:
    a = as_var(a)
    out_value = a.value.sum(axis=axis, keepdims=keepdims)

    def backward(g: np.ndarray):
        if axis is None:
            return (np.broadcast_to(g, a.value.shape).copy(),)
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.value.shape).copy(),)

    return Var(out_value, (a,), backward)


def detached_max(a: Var, axis: int, keepdims: bool = True) -> np.ndarray:
    """Max as a constant. Exact for softmax shifts (shift invariance)."""
    return a.value.max(axis=axis, keepdims=keepdims)


def reshape(a, shape) -> Var:
    a = as_var(a)
    return Var(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.value.shape),))


def concat0(parts: Sequence["Var"]) -> Var:
    """Concatenate along axis 0."""
    parts = [as_var(p) for p in parts]
    value = np.concatenate([p.value for p in parts], axis=0)
    sizes = [p.value.shape[0] for p in parts]

    def backward(g: np.ndarray):
        out = []
        offset = 0
        for size in sizes:
            out.append(g[offset : offset + size])
            offset += size
        return tuple(out)

    return Var(value, tuple(parts), backward)


def stack0(parts: Sequence[Var]) -> Var:
    """Stack 1-D vars into a matrix along a new first axis."""
    parts = [as_var(p) for p in parts]
    value = np.stack([p.value for p in parts], axis=0)

    def backward(g: np.ndarray):
        return tuple(g[i] for i in range(len(parts)))

    return Var(value, tuple(parts), backward)


def channel_contract(m, t) -> Var:
    """out(n,i,j) = sum_d m(n,d) t(d,i,j).

    Uses einsum rather than the inference kernel's fixed-order loop; values
    agree with the inference path to roundoff (~1e-13 relative), which the
    training tests pin down.
    """
    m, t = as_var(m), as_var(t)
    out_value = np.einsum("nd,dij->nij", m.value, t.value)

    def backward(g: np.ndarray):
        gm = np.einsum("nij,dij->nd", g, t.value)
        gt = np.einsum("nd,nij->dij", m.value, g)
        return gm, gt

    return Var(out_value, (m, t), backward)


def pixel_contract(s, k) -> Var:
    """out(n,d) = sum_{i,j} s(n,i,j) k(d,i,j)."""
    s, k = as_var(s), as_var(k)
    out_value = np.einsum("nij,dij->nd", s.value, k.value)

    def backward(g: np.ndarray):
        gs = np.einsum("nd,dij->nij", g, k.value)
        gk = np.einsum("nd,nij->dij", g, s.value)
        return gs, gk

    return Var(out_value, (s, k), backward)


def bilinear_gather(t, points: Sequence[ContinuousPoint]) -> Var:
    """Sample a (C,H,W) var at each point; output (P, C)."""
    t = as_var(t)
    c, h, w = t.value.shape
    if not points:
        return Var(np.zeros((0, c)), (t,), lambda g: (np.zeros_like(t.value),))
    corners = np.array([bilinear_weights(p.x, p.y, w, h) for p in points])
    x0, x1, y0, y1 = (corners[:, i].astype(np.intp) for i in range(4))
    weights = corners[:, 4:]  # (P, 4) in order w00, w10, w01, w11
    idx_y = np.stack([y0, y0, y1, y1], axis=1)
    idx_x = np.stack([x0, x1, x0, x1], axis=1)
    gathered = t.value[:, idx_y, idx_x]  # (C, P, 4)
    value = np.einsum("cpk,pk->pc", gathered, weights)

    def backward(g: np.ndarray):
        gt = np.zeros_like(t.value)
        contrib = np.einsum("pc,pk->cpk", g, weights)
        np.add.at(gt, (slice(None), idx_y, idx_x), contrib)
        return (gt,)

    return Var(value, (t,), backward)


def softmax_axis(a: Var, axis: int) -> Var:
    """Numerically shifted softmax along one axis."""
    shifted = sub(a, detached_max(a, axis=axis))
    e = exp(shifted)
    return div(e, vsum(e, axis=axis, keepdims=True))


def backward(root: Var) -> None:
    """Reverse accumulation from a scalar root."""
    if root.value.size != 1:
        raise ValueError("backward expects a scalar root")
    order: List[Var] = []
    seen = {id(root)}
    stack = [(root, iter(root.parents))]
    while stack:
        current, it = stack[-1]
        advanced = False
        for parent in it:
            if id(parent) not in seen:
                seen.add(id(parent))
                stack.append((parent, iter(parent.parents)))
                advanced = True
                break
        if not advanced:
            order.append(current)
            stack.pop()
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node.backward_fn is None or node.grad is None:
            continue
        grads = node.backward_fn(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.value)
            parent.grad = parent.grad + g
