"""Dense float64 tensors with reverse-mode automatic differentiation.

Public API
----------
Tensor: n-d array with optional gradient tracking
ComplexTensor: pair of real tensors (real, imag) used by the spectral path
Function: base class for differentiable primitives (forward/backward)
no_grad(): context manager that disables graph recording
as_tensor(): wrap arrays/scalars as constant tensors
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Iterator, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ShapeError

DTYPE = np.float64

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]


# ---------------------------------------------------------------------------
# Grad mode
# ---------------------------------------------------------------------------

_grad_state = threading.local()


def is_grad_enabled() -> bool:
    """True unless the current thread is inside ``no_grad()``."""
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording for the current thread."""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


# ---------------------------------------------------------------------------
# Function base
# ---------------------------------------------------------------------------


class Function:
    """Base class for differentiable operations.

    Subclasses implement ``forward`` on raw arrays and ``backward`` returning one
    gradient array (or None) per input tensor, each shaped like that input.
    """

    def __init__(self, *inputs: "Tensor"):
        self.inputs = inputs

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError("Forward pass not implemented for this function")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError("Backward pass not implemented for this function")

    @classmethod
    def apply(cls, *inputs: ArrayLike, **kwargs: Any) -> "Tensor":
        """Run forward on the input data and link the result into the graph."""
        tensors = tuple(as_tensor(x) for x in inputs)
        fn = cls(*tensors)
        out = fn.forward(*(t.data for t in tensors), **kwargs)
        requires_grad = is_grad_enabled() and any(t.requires_grad for t in tensors)
        return Tensor(out, requires_grad=requires_grad, _creator=fn if requires_grad else None)

    @staticmethod
    def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
        """Sum out broadcast dimensions so ``grad`` matches ``shape``."""
        if grad.shape == shape:
            return grad
        while grad.ndim > len(shape):
            grad = grad.sum(axis=0)
        for axis, size in enumerate(shape):
            if size == 1 and grad.shape[axis] != 1:
                grad = grad.sum(axis=axis, keepdims=True)
        return grad


# ---------------------------------------------------------------------------
# Tensor
# ---------------------------------------------------------------------------


class Tensor:
    """Row-major float64 array that can record the operations applied to it."""

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        _creator: Optional[Function] = None,
    ):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.ascontiguousarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._creator = _creator

    # ------------------------------------------------------------------
    # Introspection
    # ------------------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._creator is None

    def numpy(self) -> np.ndarray:
        """Return a copy of the underlying data."""
        return self.data.copy()

    def item(self) -> float:
        """Return the value of a one-element tensor.

        Raises:
            ShapeError: if this tensor holds more or fewer than one element.
        """
        if self.data.size != 1:
            raise ShapeError(f"item() needs a one-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # ------------------------------------------------------------------
    # Autodiff
    # ------------------------------------------------------------------

    def backward(self) -> None:
        """Populate ``.grad`` of every reachable leaf with dSelf/dLeaf.

        Raises:
            ShapeError: if this tensor is not a scalar.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return

        order = self._topological_order()
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node._creator is None:
                node.grad = grad.copy() if node.grad is None else node.grad + grad
                continue
            input_grads = node._creator.backward(grad)
            for inp, g in zip(node._creator.inputs, input_grads):
                if g is None or not inp.requires_grad:
                    continue
                key = id(inp)
                grads[key] = grads[key] + g if key in grads else g

    def _topological_order(self) -> list:
        """Iterative DFS so deep graphs never hit the recursion limit."""
        order: list = []
        visited: set = set()
        stack: list = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node._creator is not None:
                for inp in node._creator.inputs:
                    if inp.requires_grad and id(inp) not in visited:
                        stack.append((inp, False))
        return order

    # ------------------------------------------------------------------
    # Operators
    # ------------------------------------------------------------------

    def __add__(self, other: ArrayLike) -> "Tensor":
        return F.add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return F.add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return F.sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return F.sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return F.mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return F.mul(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return F.div(self, other)

    def __neg__(self) -> "Tensor":
        return F.scale(self, -1.0)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return F.matmul(self, other)

    def __getitem__(self, index: Any) -> "Tensor":
        return F.getitem(self, index)

    def sum(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        return F.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: Any) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def transpose(self, *axes: int) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return F.transpose(self, axes)


def as_tensor(value: ArrayLike) -> Tensor:
    """Return ``value`` unchanged if it is a Tensor, else a constant Tensor."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False)


# ---------------------------------------------------------------------------
# ComplexTensor
# ---------------------------------------------------------------------------


@dataclass
class ComplexTensor:
    """Frequency-domain value held as two real tensors of equal shape."""

    real: Tensor
    imag: Tensor

    def __post_init__(self) -> None:
        if self.real.shape != self.imag.shape:
            raise ShapeError(
                f"ComplexTensor parts differ in shape: real {self.real.shape}, imag {self.imag.shape}"
            )

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.real.shape

    def numpy(self) -> np.ndarray:
        return self.real.data + 1j * self.imag.data


from . import functional as F  # noqa: E402  circular: functional needs Tensor and Function
