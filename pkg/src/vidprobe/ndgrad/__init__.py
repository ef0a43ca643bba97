"""Minimal dense-tensor core: tape autodiff, kernels, AdamW, LR schedule."""

from .tensor import (NonFiniteError, ShapeError, Tape, TapeError, Tensor,
                     active_tape, gradient_of, no_tape, record)
from .ops import (add, bce_with_logits, concat, embedding, expand, gelu,
                  huber, index_select, kernel_forward, layer_norm, linear,
                  matmul, mean, mse, mul, reshape, sdpa, sigmoid, slice_axis,
                  softmax, softmax_cross_entropy, sub, sum_, transpose, KERNELS)
from .optim import AdamWState, LrSchedule, adamw_step, lr_at_step
from .gradcheck import gradcheck, max_grad_error


def param(data, dtype=None) -> Tensor:
    """Trainable tensor."""
    import numpy as np
    return Tensor(data, requires_grad=True, dtype=dtype or np.float32)


def const(data, dtype=None) -> Tensor:
    """Non-trainable tensor (inputs, labels, frozen features)."""
    import numpy as np
    return Tensor(data, requires_grad=False, dtype=dtype or np.float32)
