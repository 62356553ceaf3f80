"""Reverse-mode autodiff on float64 numpy arrays.

A Tensor wraps a value, an optional gradient accumulator, and a closure that
routes incoming gradients to its parents. Graphs are built define-by-run;
`backward()` walks an iterative topological order, so graph depth is not
limited by the Python recursion limit. Only nodes reachable from a tensor
with requires_grad=True keep parent links, which keeps the tape small when
most inputs are constants.
"""

from __future__ import annotations

import numpy as np


def _as_value(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcast to reach `grad.shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False, _parents=(), _backward=None):
        self.value = _as_value(value)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def backward(self):
        if self.value.size != 1:
            raise ValueError("backward() requires a scalar loss")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
        self._accumulate(np.ones_like(self.value))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(x, requires_grad=False)


def parameter(x) -> Tensor:
    return Tensor(x, requires_grad=True)


def _binary(a, b, value, da, db) -> Tensor:
    req = a.requires_grad or b.requires_grad
    out = Tensor(value, requires_grad=req, _parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(da(g), a.value.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(db(g), b.value.shape))

    out._backward = backward if req else None
    return out


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _binary(a, b, a.value + b.value, lambda g: g, lambda g: g)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _binary(a, b, a.value * b.value, lambda g: g * b.value, lambda g: g * a.value)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _binary(
        a,
        b,
        a.value @ b.value,
        lambda g: g @ np.swapaxes(b.value, -1, -2),
        lambda g: np.swapaxes(a.value, -1, -2) @ g,
    )


def _unary(a, value, da) -> Tensor:
    out = Tensor(value, requires_grad=a.requires_grad, _parents=(a,))
    if a.requires_grad:
        out._backward = lambda g: a._accumulate(da(g))
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.maximum(a.value, 0.0), lambda g: g * (a.value > 0.0))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.abs(a.value), lambda g: g * np.sign(a.value))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    return _unary(a, a.value**p, lambda g: g * p * a.value ** (p - 1.0))


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    value = a.value.sum(axis=axis, keepdims=keepdims)

    def da(g):
        if axis is None:
            return np.broadcast_to(g, a.value.shape).copy()
        g2 = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(g2, a.value.shape).copy()

    return _unary(a, value, da)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.value.size
    else:
        n = a.value.shape[axis]
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _unary(a, a.value.reshape(shape), lambda g: g.reshape(a.value.shape))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inv = np.argsort(axes)
    return _unary(a, a.value.transpose(axes), lambda g: g.transpose(inv))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    value = np.concatenate([t.value for t in tensors], axis=axis)
    req = any(t.requires_grad for t in tensors)
    out = Tensor(value, requires_grad=req, _parents=tuple(tensors))
    if req:
        sizes = [t.value.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)

        def backward(g):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    idx = [slice(None)] * g.ndim
                    idx[axis] = slice(lo, hi)
                    t._accumulate(g[tuple(idx)])

        out._backward = backward
    return out


def take_rows(a, idx) -> Tensor:
    """Row gather along the first axis; gradients scatter-add back."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    out = Tensor(a.value[idx], requires_grad=a.requires_grad, _parents=(a,))
    if a.requires_grad:

        def backward(g):
            full = np.zeros_like(a.value)
            np.add.at(full, idx, g)
            a._accumulate(full)

        out._backward = backward
    return out


def masked_softmax(logits, mask=None, axis: int = -1) -> Tensor:
    """Softmax over `axis` restricted to mask-true entries.

    Entries where mask is False get zero weight; rows with no valid entry
    come out as all zeros rather than NaN (the caller can detect them with
    fully_masked_rows). The mask is a plain boolean array, not a Tensor.
    """
    logits = as_tensor(logits)
    z = logits.value
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        z = np.where(mask, z, -np.inf)
    rowmax = np.max(z, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(rowmax), rowmax, 0.0)
    e = np.exp(z - safe)
    denom = e.sum(axis=axis, keepdims=True)
    y = e / np.where(denom == 0.0, 1.0, denom)

    out = Tensor(y, requires_grad=logits.requires_grad, _parents=(logits,))
    if logits.requires_grad:

        def backward(g):
            gy = g * y
            logits._accumulate(gy - y * gy.sum(axis=axis, keepdims=True))

        out._backward = backward
    return out


def fully_masked_rows(mask, axis: int = -1) -> np.ndarray:
    """True where a softmax row has no valid entries at all."""
    return ~np.any(np.asarray(mask, dtype=bool), axis=axis)


def masked_max(a, mask, axis: int, allow_empty: bool = False) -> Tensor:
    """Elementwise maximum over `axis` restricted to mask-true entries.

    The subgradient routes to the first argmax member of each group. Empty
    groups raise unless allow_empty is set, in which case they yield zeros
    and receive no gradient.
    """
    a = as_tensor(a)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.value.shape)
    any_valid = np.any(mask, axis=axis)
    if not allow_empty and not np.all(any_valid):
        raise ValueError("masked_max over an empty group")
    z = np.where(mask, a.value, -np.inf)
    arg = np.argmax(z, axis=axis)
    value = np.take_along_axis(z, np.expand_dims(arg, axis), axis=axis).squeeze(axis)
    value = np.where(any_valid, value, 0.0)

    out = Tensor(value, requires_grad=a.requires_grad, _parents=(a,))
    if a.requires_grad:

        def backward(g):
            full = np.zeros_like(a.value)
            np.put_along_axis(
                full, np.expand_dims(arg, axis), np.expand_dims(g * any_valid, axis), axis=axis
            )
            a._accumulate(full)

        out._backward = backward
    return out


def dropout(a, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: scaling happens at train time, inference is identity."""
    a = as_tensor(a)
    if not training or rate <= 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = 1.0 - rate
    mask = (rng.random(a.value.shape) < keep) / keep
    return mul(a, constant(mask))
