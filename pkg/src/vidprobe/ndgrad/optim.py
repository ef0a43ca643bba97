"""AdamW with decoupled weight decay and a warmup+cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import ShapeError, Tensor

__all__ = ["AdamWState", "adamw_step", "LrSchedule", "lr_at_step"]


@dataclass
class AdamWState:
    """Per-parameter moment buffers plus the shared scalar knobs."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Tensor], **kwargs) -> "AdamWState":
        state = cls(**kwargs)
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
        return state


def adamw_step(state: AdamWState, params: Sequence[Tensor], grads: Sequence[np.ndarray],
               lr: float) -> AdamWState:
    """One decoupled-weight-decay Adam update, in place on the params."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params/grads/state length mismatch")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise ShapeError(f"grad shape {g.shape} != param shape {p.data.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if state.weight_decay:
            update = update + state.weight_decay * p.data
        p.data -= (lr * update).astype(p.data.dtype)
    return state


@dataclass(frozen=True)
class LrSchedule:
    """Linear warmup from 0 to peak, then cosine decay from peak to end."""

    warmup_steps: int = 1000
    total_steps: int = 10000
    peak: float = 3e-4
    end: float = 1e-7

    def __post_init__(self):
        if not (0 < self.warmup_steps <= self.total_steps):
            raise ValueError(f"warmup {self.warmup_steps} must lie in (0, total={self.total_steps}]")


def lr_at_step(step: int, schedule: LrSchedule) -> float:
    if not (0 <= step <= schedule.total_steps):
        raise ValueError(f"step {step} outside [0, {schedule.total_steps}]")
    if step < schedule.warmup_steps:
        return schedule.peak * step / schedule.warmup_steps
    span = schedule.total_steps - schedule.warmup_steps
    if span == 0:
        return schedule.peak if step == schedule.warmup_steps else schedule.end
    frac = (step - schedule.warmup_steps) / span
    return schedule.end + (schedule.peak - schedule.end) * 0.5 * (1.0 + math.cos(math.pi * frac))
