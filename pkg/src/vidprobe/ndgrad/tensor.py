"""Dense float tensors with tape-based reverse-mode differentiation.

Storage is float32 by default; gradient checks replay the same graph in
float64 (see ``gradcheck``). Tensors are immutable values once created;
a Tape is confined to the thread that opened it.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

__all__ = ["Tensor", "Tape", "ShapeError", "NonFiniteError", "TapeError",
           "gradient_of", "record", "no_tape", "active_tape"]


class ShapeError(ValueError):
    """Input shapes do not conform to an op's shape rule."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


class TapeError(RuntimeError):
    """Tape misuse: backward without a tape, or backward run twice."""


_local = threading.local()


def _check_finite(data: np.ndarray) -> None:
    # A float64-accumulated sum is a single cheap pass; NaN/Inf in the input
    # can never cancel back to a finite total.
    if not np.isfinite(data.sum(dtype=np.float64)):
        raise NonFiniteError("op produced non-finite values")


class Tensor:
    """Dense n-d float value with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32):
        arr = np.asarray(data, dtype=dtype)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, dtype=dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # light operator sugar; the kernels live in ops.py
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


class Tape:
    """Ordered record of executed ops, traversed in reverse by backward.

    Use as a context manager around the forward pass:

        with Tape() as tape:
            loss = ...
        grads = gradient_of(loss, params)
    """

    def __init__(self):
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "tapes", None)
        if stack is None:
            stack = _local.tapes = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _local.tapes.pop()

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> None:
        self._entries.append((out, inputs, backward))

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)/d(loss)=1 and accumulate grads in reverse op order."""
        if self._consumed:
            raise TapeError("backward already ran on this tape; record a new forward first")
        if loss.data.ndim != 0 and loss.data.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")
        self._consumed = True
        loss.grad = np.ones_like(loss.data)
        for out, inputs, backward in reversed(self._entries):
            g = out.grad
            if g is None:
                continue
            in_grads = backward(g)
            for tensor, grad in zip(inputs, in_grads):
                if grad is not None and tensor.requires_grad:
                    tensor.accumulate_grad(grad)


class _NoTape:
    def __enter__(self):
        stack = getattr(_local, "tapes", None)
        if stack is None:
            stack = _local.tapes = []
        stack.append(None)
        return self

    def __exit__(self, exc_type, exc, tb):
        _local.tapes.pop()


def no_tape() -> _NoTape:
    """Context that suppresses recording (inference / frozen evaluation)."""
    return _NoTape()


def active_tape() -> Optional[Tape]:
    stack = getattr(_local, "tapes", None)
    if not stack:
        return None
    return stack[-1]


def record(out_data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap an op result, registering it on the active tape when needed.

    ``backward(out_grad) -> [grad_or_None per input]``. Custom ops (outside
    the fixed kernel set) hook into differentiation through this function.
    """
    _check_finite(out_data)
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.requires_grad = needs
    if needs:
        tape.record(out, tuple(inputs), backward)
    return out


def gradient_of(loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> dict:
    """Run backward on the active tape; return a param -> gradient map.

    Every parameter reachable from ``loss`` gets a populated ``.grad``;
    parameters passed in ``params`` that the loss never touched map to zeros.
    """
    tape = active_tape()
    if tape is None:
        raise TapeError("gradient_of requires an active tape")
    tape.backward(loss)
    out: dict[int, np.ndarray] = {}
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            out[id(p)] = p.grad
    return out
