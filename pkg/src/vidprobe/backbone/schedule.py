"""Forward-noising schedule: clean-signal fraction alpha(t) on t in [0, 1]."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = ["cosine_alpha", "NoiseSchedule", "forward_noise", "forward_noise_batch"]


def cosine_alpha(t: float) -> float:
    """cos^2(pi t / 2), pinned to exact 1 and 0 at the endpoints."""
    if t == 0.0:
        return 1.0
    if t == 1.0:
        return 0.0
    return math.cos(math.pi * t / 2.0) ** 2


@dataclass(frozen=True)
class NoiseSchedule:
    """Monotone 1 -> 0 mixing curve plus its discretization grid size."""

    alpha: Callable[[float], float] = field(default=cosine_alpha)
    t_steps: int = 1000

    def alpha_at(self, t: float) -> float:
        if not (0.0 <= t <= 1.0):
            raise ValueError(f"t={t} outside [0, 1]")
        a = self.alpha(t)
        if not (0.0 <= a <= 1.0):
            raise ValueError(f"alpha({t})={a} outside [0, 1]")
        return a

    def t_of_step(self, noise_step: int) -> float:
        if not (0 <= noise_step <= self.t_steps):
            raise ValueError(f"noise step {noise_step} outside [0, {self.t_steps}]")
        return noise_step / self.t_steps


def forward_noise(z0: np.ndarray, t: float, eps: np.ndarray,
                  schedule: NoiseSchedule = NoiseSchedule()) -> np.ndarray:
    """z_t = sqrt(alpha) z0 + sqrt(1-alpha) eps, exact at both endpoints."""
    if z0.shape != eps.shape:
        raise ValueError(f"noise shape {eps.shape} != latent shape {z0.shape}")
    a = schedule.alpha_at(t)
    sa = np.float32(math.sqrt(a))
    sn = np.float32(math.sqrt(1.0 - a))
    return sa * z0 + sn * eps


def forward_noise_batch(z0: np.ndarray, t: np.ndarray, eps: np.ndarray,
                        schedule: NoiseSchedule = NoiseSchedule()) -> np.ndarray:
    """Per-sample t over a leading batch axis."""
    if z0.shape != eps.shape or t.shape != (z0.shape[0],):
        raise ValueError("batch shapes disagree")
    a = np.array([schedule.alpha_at(float(ti)) for ti in t], dtype=np.float64)
    shape = (-1,) + (1,) * (z0.ndim - 1)
    sa = np.sqrt(a).astype(np.float32).reshape(shape)
    sn = np.sqrt(1.0 - a).astype(np.float32).reshape(shape)
    return sa * z0 + sn * eps
