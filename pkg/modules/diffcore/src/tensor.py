"""Tensor container and reverse-mode graph traversal."""

from contextlib import contextmanager
from contextvars import ContextVar
from typing import Any, Callable, Iterator, Sequence

import numpy as np
from attrs import define, field

_GRAD_ENABLED: ContextVar[bool] = ContextVar("grad_enabled", default=True)

Backward = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class DiffcoreError(ValueError):
    """Base class for compute core errors."""


class ShapeError(DiffcoreError):
    """Operand shapes are incompatible."""


class UnsupportedKernelError(DiffcoreError):
    """Convolution kernel size outside the supported set."""


class GradientError(DiffcoreError):
    """Backward pass requested on something that is not a scalar."""


def _as_array(value: Any) -> np.ndarray:
    array = np.asarray(value)
    if not np.issubdtype(array.dtype, np.floating):
        array = array.astype(np.float64)
    return array


@contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording the graph."""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


def grad_enabled() -> bool:
    return _GRAD_ENABLED.get()


@define(eq=False, slots=False)
class Tensor:
    """
    Dense array that can take part in reverse-mode differentiation.

    Leaves created with ``requires_grad=True`` receive ``grad`` after
    ``backward``. Intermediate results only keep their gradient when
    ``retain_grad()`` was called on them.
    """

    data: np.ndarray = field(converter=_as_array)
    requires_grad: bool = field(default=False, kw_only=True)
    grad: np.ndarray | None = field(default=None, kw_only=True, repr=False)
    name: str | None = field(default=None, kw_only=True)
    op: str = field(default="leaf", kw_only=True)
    _parents: tuple["Tensor", ...] = field(factory=tuple, kw_only=True, repr=False)
    _backward: Backward | None = field(default=None, kw_only=True, repr=False)
    _retain: bool = field(default=False, init=False, repr=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, name=self.name)

    def retain_grad(self) -> "Tensor":
        self._retain = True
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, grad: np.ndarray) -> None:
        grad = np.asarray(grad, dtype=self.data.dtype).reshape(self.shape)
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    def backward(self) -> None:
        """Populate ``grad`` on every requiring leaf reachable from this scalar."""
        if self.data.size != 1:
            raise GradientError(f"backward() needs a scalar loss, got shape {self.shape}")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            stack.extend((parent, False) for parent in node._parents if parent.requires_grad)

        pending: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            upstream = pending.pop(id(node), None)
            if upstream is None:
                continue
            if node.is_leaf or node._retain:
                node._accumulate(upstream)
            if node._backward is None:
                continue
            for parent, grad in zip(node._parents, node._backward(upstream)):
                if grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = grad if key not in pending else pending[key] + grad


def tensor(value: Any, *, requires_grad: bool = False, name: str | None = None, dtype: Any = None) -> Tensor:
    array = np.array(value, dtype=dtype) if dtype is not None else np.array(value)
    return Tensor(array, requires_grad=requires_grad, name=name)


def zero_grad(params: Sequence[Tensor]) -> None:
    for param in params:
        param.zero_grad()


def record(data: np.ndarray, parents: Sequence[Tensor], backward: Backward, op: str) -> Tensor:
    """Wrap an op result, attaching graph edges only when a parent needs them."""
    track = grad_enabled() and any(parent.requires_grad for parent in parents)
    return Tensor(
        data,
        requires_grad=track,
        op=op,
        parents=tuple(parents) if track else (),
        backward=backward if track else None,
    )


def as_tensor(value: "Tensor | np.ndarray | float") -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)
