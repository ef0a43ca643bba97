"""Relative-pose readout and the nearest-rotation (Procrustes) projection."""

from __future__ import annotations

import warnings
from typing import Optional

import numpy as np

from .. import ndgrad as ng
from .attentive import AttentiveHead
from .common import register_head

__all__ = ["procrustes_project", "PoseHead", "pose_forward"]


def procrustes_project(M: np.ndarray, warn_nonunique: bool = True) -> np.ndarray:
    """Frobenius-nearest proper rotation to a 3x3 matrix.

    R = U diag(1, 1, det(U V^T)) V^T from the SVD M = U S V^T. When the two
    smallest singular values coincide and det(U V^T) < 0 the minimizer is not
    unique; one valid minimizer is returned and a warning is raised.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.shape != (3, 3) or not np.isfinite(M).all():
        raise ValueError(f"procrustes_project needs a finite 3x3 matrix, got {M.shape}")
    U, S, Vt = np.linalg.svd(M)
    sign = np.sign(np.linalg.det(U @ Vt))
    if sign == 0:
        sign = 1.0
    if sign < 0 and warn_nonunique and abs(S[1] - S[2]) <= 1e-9 * max(S[0], 1.0):
        warnings.warn("nearest rotation is not unique (tied smallest singular "
                      "values with a reflection); returning one minimizer",
                      RuntimeWarning, stacklevel=2)
    D = np.diag([1.0, 1.0, sign])
    return U @ D @ Vt


@register_head
class PoseHead(AttentiveHead):
    """Attentive readout over concatenated first/last-frame tokens -> [R|t]."""

    kind = "pose"

    def __init__(self, dim: int = 128, heads: int = 4, mlp_hidden: int = 512,
                 seed: int = 0, n_out: int = 12):
        super().__init__(dim=dim, n_out=12, heads=heads, mlp_hidden=mlp_hidden,
                         seed=seed)
        self.config = dict(dim=dim, heads=heads, mlp_hidden=mlp_hidden, seed=seed)


def pose_forward(head: PoseHead, feats_first, feats_last,
                 pose_gt: Optional[np.ndarray] = None
                 ) -> tuple[np.ndarray, ng.Tensor, Optional[ng.Tensor]]:
    """Predict [R|t] from first/last-frame features.

    Returns (projected pose(s) with R in SO(3), raw 12-vector tensor,
    optional mean L2 loss against the raw prediction). Accepts (N, d) or
    batched (B, N, d) feature pairs.
    """
    f0 = feats_first if isinstance(feats_first, ng.Tensor) else ng.const(feats_first)
    f1 = feats_last if isinstance(feats_last, ng.Tensor) else ng.const(feats_last)
    squeeze = f0.data.ndim == 2
    if squeeze:
        f0 = ng.reshape(f0, (1,) + f0.data.shape)
        f1 = ng.reshape(f1, (1,) + f1.data.shape)
    tokens = ng.concat([f0, f1], axis=1)
    raw = head.forward(tokens)                        # (B, 12)

    pred = raw.data.reshape(-1, 3, 4).astype(np.float64)
    projected = np.stack([
        np.hstack([procrustes_project(p[:, :3], warn_nonunique=False), p[:, 3:]])
        for p in pred
    ])
    if squeeze:
        projected = projected[0]

    loss = None
    if pose_gt is not None:
        gt = np.asarray(pose_gt, dtype=np.float32).reshape(raw.data.shape)
        loss = ng.mse(raw, ng.const(gt))
    return projected, raw, loss
