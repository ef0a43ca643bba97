"""Central-finite-difference gradient verification.

The graph is replayed in float64 so the h=1e-3 stencil is trustworthy
against float32 storage noise.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor

__all__ = ["gradcheck", "max_grad_error"]


def max_grad_error(fn: Callable[[Sequence[Tensor]], Tensor], inputs: Sequence[np.ndarray],
                   h: float = 1e-3) -> float:
    """Worst relative error between tape gradients and central differences.

    ``fn`` maps a list of Tensors to a scalar Tensor; every input is treated
    as differentiable.
    """
    inputs64 = [np.asarray(x, dtype=np.float64) for x in inputs]
    tensors = [Tensor(x, requires_grad=True, dtype=np.float64) for x in inputs64]
    with Tape() as tape:
        loss = fn(tensors)
    tape.backward(loss)
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    worst = 0.0
    for i, base in enumerate(inputs64):
        numeric = np.zeros_like(base)
        flat = numeric.reshape(-1)
        for j in range(base.size):
            for sign, slot in ((+1, 0), (-1, 1)):
                probe = [x.copy() for x in inputs64]
                probe[i].reshape(-1)[j] += sign * h
                val = _eval(fn, probe)
                if slot == 0:
                    plus = val
                else:
                    flat[j] = (plus - val) / (2.0 * h)
        denom = np.maximum(np.maximum(np.abs(analytic[i]), np.abs(numeric)), 1e-4)
        worst = max(worst, float((np.abs(analytic[i] - numeric) / denom).max()))
    return worst


def _eval(fn, arrays) -> float:
    tensors = [Tensor(x, dtype=np.float64) for x in arrays]
    return float(fn(tensors).data)


def gradcheck(fn, inputs, rel_tol: float = 1e-3, h: float = 1e-3) -> bool:
    err = max_grad_error(fn, inputs, h=h)
    if err >= rel_tol:
        raise AssertionError(f"gradcheck failed: max relative error {err:.3e} >= {rel_tol:g}")
    return True
