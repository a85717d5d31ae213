"""Dense tensors with define-by-run reverse-mode automatic differentiation.

Every differentiable operation produces a new :class:`Tensor` holding its
parents and a backward closure. Calling :meth:`Tensor.backward` on a scalar
walks the recorded graph in reverse topological order, accumulates gradients
into the ``grad`` slot of every leaf that requires them, and then releases the
graph.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Optional, Sequence, Tuple, Union

import numpy as np

ArrayLike = Union[np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


def _as_float_array(data: ArrayLike, dtype=None) -> np.ndarray:
    if dtype is not None:
        return np.asarray(data, dtype=dtype)
    arr = np.asarray(data)
    if arr.dtype == np.float32 or arr.dtype == np.float64:
        return arr
    return arr.astype(np.float32)


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """An n-dimensional real array with an optional gradient slot.

    Args:
        data: array-like values. Float arrays keep their precision; anything
            else is converted to single precision.
        requires_grad: whether to accumulate a gradient into ``grad``.
        dtype: force a numpy dtype (``np.float32`` or ``np.float64``).
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype=None):
        self.data = _as_float_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None

    # ------------------------------------------------------------------
    # construction helpers
    # ------------------------------------------------------------------
    @staticmethod
    def _make(data: np.ndarray, parents: Tuple["Tensor", ...], backward: BackwardFn, op: str = "") -> "Tensor":
        if not np.all(np.isfinite(data)):
            raise FloatingPointError(f"{op or 'operation'} produced non-finite values")
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        req = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = req
        out._parents = parents if req else ()
        out._backward = backward if req else None
        return out

    def _lift(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # ------------------------------------------------------------------
    # reverse-mode driver
    # ------------------------------------------------------------------
    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Backpropagate from this scalar through the recorded graph.

        Leaf gradients accumulate additively into ``grad`` (call
        :meth:`zero_grad` between independent steps). Intermediate gradients
        and the graph itself are released afterwards.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward requires a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            raise ValueError("backward called on a tensor that does not require grad")

        order = _topological_order(self)
        pending = {id(self): grad}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            grads = node._backward(g)
            for parent, pg in zip(node._parents, grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                prev = pending.get(key)
                pending[key] = pg if prev is None else prev + pg
        for node in order:
            if node._backward is not None:
                node._backward = None
                node._parents = ()

    # ------------------------------------------------------------------
    # elementwise arithmetic
    # ------------------------------------------------------------------
    def __add__(self, other):
        other = self._lift(other)
        a_shape, b_shape = self.shape, other.shape

        def backward(g):
            return unbroadcast(g, a_shape), unbroadcast(g, b_shape)

        return Tensor._make(self.data + other.data, (self, other), backward, "add")

    __radd__ = __add__

    def __sub__(self, other):
        other = self._lift(other)
        a_shape, b_shape = self.shape, other.shape

        def backward(g):
            return unbroadcast(g, a_shape), unbroadcast(-g, b_shape)

        return Tensor._make(self.data - other.data, (self, other), backward, "sub")

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        other = self._lift(other)
        a, b = self.data, other.data

        def backward(g):
            return unbroadcast(g * b, a.shape), unbroadcast(g * a, b.shape)

        return Tensor._make(a * b, (self, other), backward, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        a, b = self.data, other.data

        def backward(g):
            return unbroadcast(g / b, a.shape), unbroadcast(-g * a / (b * b), b.shape)

        return Tensor._make(a / b, (self, other), backward, "div")

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,), "neg")

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            raise TypeError("only scalar exponents are supported")
        a = self.data

        def backward(g):
            return (g * exponent * a ** (exponent - 1),)

        return Tensor._make(a**exponent, (self,), backward, "pow")

    def __matmul__(self, other):
        other = self._lift(other)
        a, b = self.data, other.data
        if a.ndim < 2 or b.ndim < 2:
            raise ValueError(f"matmul needs operands with ndim >= 2, got {a.shape} and {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

        def backward(g):
            ga = g @ np.swapaxes(b, -1, -2)
            gb = np.swapaxes(a, -1, -2) @ g
            return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

        return Tensor._make(a @ b, (self, other), backward, "matmul")

    def exp(self):
        out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out,), "exp")

    def log(self):
        a = self.data
        return Tensor._make(np.log(a), (self,), lambda g: (g / a,), "log")

    def sqrt(self):
        out = np.sqrt(self.data)
        return Tensor._make(out, (self,), lambda g: (g * 0.5 / out,), "sqrt")

    def clip(self, lo: float, hi: float):
        """Clamp values; the gradient is zero where clamping was active."""
        a = self.data
        inside = (a >= lo) & (a <= hi)
        return Tensor._make(np.clip(a, lo, hi), (self,), lambda g: (g * inside,), "clip")

    # ------------------------------------------------------------------
    # reductions and shape manipulation
    # ------------------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        out = self.data.sum(axis=axis, keepdims=keepdims)
        return Tensor._make(np.asarray(out), (self,), backward, "sum")

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.shape
        return Tensor._make(self.data.reshape(shape), (self,), lambda g: (g.reshape(src),), "reshape")

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))
        return Tensor._make(self.data.transpose(axes), (self,), lambda g: (g.transpose(inverse),), "transpose")

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(tuple(axes))

    def __getitem__(self, index):
        shape = self.shape
        dtype = self.dtype

        basic = _is_basic_index(index)

        def backward(g):
            full = np.zeros(shape, dtype=dtype)
            if basic:
                full[index] = g
            else:
                np.add.at(full, index, g)
            return (full,)

        return Tensor._make(np.array(self.data[index]), (self,), backward, "getitem")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def _topological_order(root: Tensor) -> list:
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited and parent.requires_grad:
                stack.append((parent, False))
    return order


def tensor(data: ArrayLike, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)
