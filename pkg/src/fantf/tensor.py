"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation whose inputs include a tensor with ``requires_grad`` appends a
node to the calling thread's tape. ``backward`` walks the tape in reverse from
the root, accumulates gradients additively, writes them into the leaves and
frees the tape. Values are row-major numpy arrays that are never shared with
callers: constructors and reshapes copy.
"""
from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

__all__ = [
    "Tensor", "Tape", "backward", "no_grad", "get_tape", "as_tensor",
    "add", "sub", "mul", "div", "neg", "scale", "matmul", "transpose", "swap_last",
    "reshape", "concat", "tensor_sum", "mean", "exp", "log", "relu", "sigmoid",
    "absolute", "square", "softmax_lastdim", "log_softmax_lastdim",
    "layer_norm_lastdim", "masked_fill",
]


@dataclass
class Node:
    inputs: tuple
    output: "Tensor"
    rule: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of differentiable operations for one forward pass."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self):
        return len(self.nodes)

    def record(self, inputs, output, rule) -> int:
        self.nodes.append(Node(tuple(inputs), output, rule))
        return len(self.nodes) - 1

    def clear(self):
        for node in self.nodes:
            node.output.node_id = None
            node.output._tape = None
        self.nodes = []


_local = threading.local()


def get_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


def _grad_enabled() -> bool:
    return getattr(_local, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Suspend recording on this thread's tape."""
    prev = _grad_enabled()
    _local.enabled = False
    try:
        yield
    finally:
        _local.enabled = prev


class Tensor:
    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=np.float64, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node_id: int | None = None
        self._tape: Tape | None = None
        self.name = name

    @classmethod
    def zeros(cls, shape, requires_grad=False):
        return cls(np.zeros(shape), requires_grad)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def flat(self) -> np.ndarray:
        return self.data.reshape(-1).copy()

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{tag})"

    __array_priority__ = 100

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return swap_last(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, inputs, rule) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = np.ascontiguousarray(data, dtype=np.float64)
    out.grad = None
    out.name = None
    out.node_id = None
    out._tape = None
    live = _grad_enabled() and any(t.requires_grad for t in inputs)
    out.requires_grad = live
    if live:
        tape = get_tape()
        out.node_id = tape.record(inputs, out, rule)
        out._tape = tape
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    ad, bd = a.data, b.data
    return _result(ad / bd, (a, b), lambda g: (g / bd, -g * ad / (bd * bd)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    """Multiply by a constant Python scalar."""
    a = as_tensor(a)
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes.

    Leading axes broadcast, so ``[B, N, D] @ [D, E]`` applies one weight matrix
    to every batch element.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch extents of {a.shape} and {b.shape} differ") from None
    ad, bd = a.data, b.data

    def rule(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _result(ad @ bd, (a, b), rule)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes).copy(), (a,), lambda g: (np.transpose(g, inverse),))


def swap_last(a) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        data = a.data.reshape(shape).copy()
    except ValueError:
        raise DimensionError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None
    old = a.shape
    return _result(data, (a,), lambda g: (g.reshape(old),))


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(data, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def tensor_sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), rule)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[i] for i in axes]))
    return scale(tensor_sum(a, axis, keepdims), 1.0 / count)


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return _result(y, (a,), lambda g: (g * y,))


def log(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return _result(np.log(x), (a,), lambda g: (g / x,))


def relu(a) -> Tensor:
    """Elementwise max(0, x); the subgradient at 0 is 0."""
    a = as_tensor(a)
    live = a.data > 0
    return _result(np.where(live, a.data, 0.0), (a,), lambda g: (g * live,))


def _stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = _stable_sigmoid(a.data)
    return _result(y, (a,), lambda g: (g * y * (1.0 - y),))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _result(np.abs(a.data), (a,), lambda g: (g * sign,))


def square(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return _result(x * x, (a,), lambda g: (2.0 * g * x,))


def _require_finite(x: np.ndarray, op: str):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{op}: non-finite input")


def softmax_lastdim(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim == 0 or a.shape[-1] < 1:
        raise DimensionError(f"softmax: last extent must be >= 1, shape is {a.shape}")
    _require_finite(a.data, "softmax")
    z = np.exp(a.data - a.data.max(axis=-1, keepdims=True))
    y = z / z.sum(axis=-1, keepdims=True)

    def rule(g):
        return (y * (g - np.sum(g * y, axis=-1, keepdims=True)),)

    return _result(y, (a,), rule)


def log_softmax_lastdim(a) -> Tensor:
    a = as_tensor(a)
    _require_finite(a.data, "log_softmax")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    p = np.exp(y)
    return _result(y, (a,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def layer_norm_lastdim(a, eps: float = 1e-5) -> Tensor:
    """Normalize each last-axis slice to zero mean and unit (population) variance."""
    a = as_tensor(a)
    if a.ndim == 0 or a.shape[-1] < 2:
        raise DimensionError(f"layer_norm: degenerate slice, last extent of {a.shape} is < 2")
    if not eps > 0:
        raise ContractError(f"layer_norm: eps must be > 0, got {eps}")
    x = a.data
    centered = x - x.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(np.mean(centered * centered, axis=-1, keepdims=True) + eps)
    y = centered * inv_std

    def rule(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = np.mean(g * y, axis=-1, keepdims=True)
        return (inv_std * (g - gm - y * gy),)

    return _result(y, (a,), rule)


def masked_fill(a, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is true with ``value``; no gradient flows there."""
    a = as_tensor(a)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    keep = ~mask
    return _result(np.where(mask, value, a.data), (a,), lambda g: (g * keep,))


def backward(root: Tensor):
    """Populate ``grad`` on every leaf that ``root`` depends on.

    Gradients are added into existing leaf ``grad`` arrays, so callers reset
    them between steps. The tape is freed afterwards.
    """
    if root.size != 1:
        raise ContractError(f"backward: root must be a scalar, shape is {root.shape}")
    tape = get_tape()
    if root.node_id is None or root._tape is not tape:
        raise ContractError("backward: root is not recorded on this thread's tape")
    pending: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    leaves: dict[int, tuple[Tensor, np.ndarray]] = {}
    for node in reversed(tape.nodes[: root.node_id + 1]):
        g = pending.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.rule(g)):
            if gi is None or not inp.requires_grad:
                continue
            gi = _unbroadcast(np.asarray(gi, dtype=np.float64), inp.shape)
            key = id(inp)
            if inp._tape is tape:
                pending[key] = pending[key] + gi if key in pending else gi
            elif key in leaves:
                leaves[key] = (inp, leaves[key][1] + gi)
            else:
                leaves[key] = (inp, gi)
    for leaf, g in leaves.values():
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
    tape.clear()
