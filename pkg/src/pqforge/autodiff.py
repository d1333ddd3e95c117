"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure mapping the upstream gradient to one gradient per parent.  Custom
backward rules (straight-through estimators, mask surrogates) are built with
:func:`make_node`, which is the same mechanism the built-in ops use.
"""

from __future__ import annotations

import contextlib
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ShapeError, StateError

_default_dtype = np.float32


def get_default_dtype():
    return _default_dtype


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily change the dtype used for new tensors and parameters."""
    global _default_dtype
    previous = _default_dtype
    _default_dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _default_dtype = previous


def make_rng(seed: int, name: str = "") -> np.random.Generator:
    """Counter-based (Philox) generator keyed by ``seed`` and a stream name.

    Streams with different names are statistically independent, so the order in
    which layers are created does not change their initial weights.
    """
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed", "__weakref__")

    # numpy defers binary operators to us when a Tensor is on the right
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            self.data = arr if np.issubdtype(arr.dtype, np.floating) else arr.astype(_default_dtype)
        else:
            self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

    # operators
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)

    def backward(self, grad=None):
        backward(self, grad)


class Parameter(Tensor):
    """Trainable leaf tensor with a name that is unique inside its model.

    ``role`` tags what the parameter is (``weight``, ``bias``, ``norm``,
    ``mask``, ``quant``); weight rewinding only restores the first three.
    """

    __slots__ = ("name", "trainable", "role", "lr_scale", "decay")

    def __init__(self, data, name: str = "", trainable: bool = True, role: str = "weight",
                 lr_scale: float = 1.0, dtype=None):
        super().__init__(data, requires_grad=trainable, dtype=dtype)
        self.name = name
        self.trainable = trainable
        self.role = role
        self.lr_scale = lr_scale
        self.decay = role == "weight"

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape}, role={self.role})"


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    if dtype is None and not isinstance(value, np.ndarray):
        dtype = _default_dtype
    return Tensor(value, dtype=dtype)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def make_node(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap ``data`` as the output of an op with the given vector-Jacobian rule.

    ``backward_fn(g)`` must return one gradient (or ``None``) per parent; the
    engine sums broadcast dimensions away.
    """
    requires = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires)
    if requires:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _topological(root: Tensor) -> list:
    order, seen = [], set()
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Tensor, grad=None):
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    The recorded graph is released afterwards; a second call on the same root
    raises :class:`StateError`.
    """
    if root._consumed:
        raise StateError("backward() called twice on the same graph; run a new forward pass first")
    if not root.requires_grad:
        raise StateError("backward() on a tensor that does not require gradients")
    if grad is None:
        seed = np.ones_like(root.data)
    else:
        seed = np.asarray(grad, dtype=root.data.dtype).reshape(root.data.shape)
    order = _topological(root)
    grads = {id(root): seed}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                g = np.asarray(g, dtype=node.data.dtype)
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            pg = _unbroadcast(np.asarray(pg), parent.data.shape)
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    for node in order:
        node._parents = ()
        node._backward = None
    root._consumed = True


# elementwise and reduction ops ---------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return make_node(out, (a, b), lambda g: (g / b.data, -g * out / b.data))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_node(-a.data, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    return make_node(a.data ** exponent, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return make_node(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_node(np.log(a.data), (a,), lambda g: (g / a.data,))


def abs_(a) -> Tensor:
    a = as_tensor(a)
    return make_node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    active = a.data > 0
    return make_node(np.where(active, a.data, 0).astype(a.data.dtype), (a,), lambda g: (g * active,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_node(out, (a,), lambda g: (g * (1.0 - out * out),))


def hard_tanh(a) -> Tensor:
    a = as_tensor(a)
    inside = (a.data > -1) & (a.data < 1)
    return make_node(np.clip(a.data, -1, 1), (a,), lambda g: (g * inside,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _stable_sigmoid(a.data)
    return make_node(out, (a,), lambda g: (g * out * (1.0 - out),))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)
    shape = a.data.shape

    def _back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return make_node(np.asarray(out, dtype=a.data.dtype), (a,), _back)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.data.shape[ax] for ax in axes]))
    return sum_(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    original = a.data.shape
    return make_node(a.data.reshape(shape), (a,), lambda g: (g.reshape(original),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inverse = None if axes is None else tuple(np.argsort(axes))
    return make_node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape[-1] != b.data.shape[0 if b.ndim == 1 else -2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def _back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if a.ndim > 2:
            gb = np.tensordot(a.data, g, axes=(tuple(range(a.ndim - 1)), tuple(range(g.ndim - 1))))
        else:
            gb = a.data.T @ g
        return ga, gb

    return make_node(out, (a, b), _back)


def where(condition: np.ndarray, a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(condition, dtype=bool)
    return make_node(np.where(cond, a.data, b.data), (a, b),
                     lambda g: (np.where(cond, g, 0), np.where(cond, 0, g)))


def crop2d(a, height: int, width: int) -> Tensor:
    """Keep the top-left ``height x width`` window of an NCHW tensor."""
    a = as_tensor(a)
    shape = a.data.shape

    def _back(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, :, :height, :width] = g
        return (full,)

    return make_node(np.ascontiguousarray(a.data[:, :, :height, :width]), (a,), _back)


def concat_sum(tensors: Iterable[Tensor]) -> Tensor | None:
    """Sum of a possibly empty collection of scalar tensors (``None`` if empty)."""
    total = None
    for t in tensors:
        if t is None:
            continue
        total = t if total is None else total + t
    return total


# optimizer -----------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Iterable[Parameter], state: AdamState):
    """One bias-corrected Adam update; gradients are zeroed afterwards.

    Parameters with ``trainable=False`` are skipped.  ``lr_scale`` on a parameter
    multiplies the learning rate for it alone.
    """
    params = [p for p in params if p.trainable]
    for p in params:
        if p.grad is None:
            raise StateError(f"parameter {p.name!r} has no gradient; call backward() or zero_grad() first")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** t
    correction2 = 1.0 - b2 ** t
    for p in params:
        g = p.grad
        if state.weight_decay and p.decay:
            g = g + state.weight_decay * p.data
        key = p.name or id(p)
        m = state.m.get(key)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        else:
            v = state.v[key]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[key] = m
        state.v[key] = v
        m_hat = m / correction1
        v_hat = v / correction2
        step = (state.lr * p.lr_scale) * m_hat / (np.sqrt(v_hat) + state.eps)
        p.data = (p.data - step).astype(p.data.dtype, copy=False)
        p.grad = np.zeros_like(p.data)
