"""Evaluation metrics and summary statistics.

All functions are pure; positions and thresholds are unit-agnostic as long
as callers keep them consistent (the pipeline uses latent-pixel units for
track distances).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "VirtualCube", "MetricReport", "HIGHER", "LOWER", "METRIC_DIRECTIONS",
    "top1", "abs_rel_err", "epe", "average_jaccard", "mean_iou",
    "pearson", "spearman", "relative_change", "AJ_THRESHOLDS",
]

HIGHER = "higher_better"
LOWER = "lower_better"

# default track thresholds, in latent pixels
AJ_THRESHOLDS = (1.0, 2.0, 4.0, 8.0, 16.0)

METRIC_DIRECTIONS = {
    "top1": HIGHER,
    "aj": HIGHER,
    "mean_iou": HIGHER,
    "abs_rel_err": LOWER,
    "epe": LOWER,
    "train_loss": LOWER,
}


@dataclass(frozen=True)
class VirtualCube:
    """Eight corners of a unit cube centered at (0, 0, 2) in camera space."""

    center: tuple = (0.0, 0.0, 2.0)
    side: float = 1.0

    @property
    def points(self) -> np.ndarray:
        c = np.asarray(self.center, dtype=np.float64)
        h = self.side / 2.0
        corners = np.array([[sx, sy, sz] for sx in (-h, h) for sy in (-h, h)
                            for sz in (-h, h)], dtype=np.float64)
        return corners + c


@dataclass
class MetricReport:
    task: str
    metric: str
    direction: str
    value: float
    provenance: dict = field(default_factory=dict)


def top1(logits: np.ndarray, labels: Sequence[int]) -> float:
    """Fraction of rows whose argmax (lowest index on ties) hits the label."""
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.intp)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ValueError(f"logits {logits.shape} vs labels {labels.shape}")
    if logits.shape[0] == 0:
        raise ValueError("top1 of empty input")
    return float((logits.argmax(axis=1) == labels).mean())


def abs_rel_err(pred: np.ndarray, gt: np.ndarray, depth_floor: float = 1e-3) -> float:
    """Mean over valid pixels of |pred - gt| / gt; gt <= floor is excluded."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"depth shapes {pred.shape} vs {gt.shape}")
    valid = gt > depth_floor
    if not valid.any():
        raise ValueError("no valid depth pixels")
    return float((np.abs(pred[valid] - gt[valid]) / gt[valid]).mean())


def _apply_pose(P: np.ndarray, pts: np.ndarray) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    if P.shape != (3, 4):
        raise ValueError(f"pose must be 3x4, got {P.shape}")
    return pts @ P[:, :3].T + P[:, 3]


def epe(P_hat: np.ndarray, P: np.ndarray, cube: VirtualCube = VirtualCube()) -> float:
    """Mean displacement of the virtual-cube corners under the two poses."""
    pts = cube.points
    d = _apply_pose(P, pts) - _apply_pose(P_hat, pts)
    return float(np.linalg.norm(d, axis=1).mean())


def average_jaccard(pred_pos: np.ndarray, pred_vis: np.ndarray,
                    gt_pos: np.ndarray, gt_vis: np.ndarray,
                    thresholds: Sequence[float] = AJ_THRESHOLDS,
                    query_frame: int = 0) -> float:
    """Jaccard TP/(TP+FP+FN) averaged over distance thresholds.

    pos: (T, N, 2); vis: (T, N) bool. The query frame is excluded from
    scoring. TP: both visible and within delta; FP: predicted visible but
    occluded or off; FN: ground-truth visible but missed or off.
    """
    pred_pos, gt_pos = np.asarray(pred_pos, float), np.asarray(gt_pos, float)
    pred_vis, gt_vis = np.asarray(pred_vis, bool), np.asarray(gt_vis, bool)
    if pred_pos.shape != gt_pos.shape or pred_vis.shape != gt_vis.shape:
        raise ValueError("prediction/ground-truth shapes disagree")
    if pred_pos.ndim != 3 or pred_pos.shape[2] != 2 or pred_pos.shape[1] == 0:
        raise ValueError("positions must be (frames, tracks, 2) with tracks > 0")
    keep = np.arange(pred_pos.shape[0]) != query_frame
    dist = np.linalg.norm(pred_pos[keep] - gt_pos[keep], axis=-1)
    pv, gv = pred_vis[keep], gt_vis[keep]
    scores = []
    for delta in thresholds:
        within = dist <= delta
        tp = (pv & gv & within).sum()
        fp = (pv & ~(gv & within)).sum()
        fn = (gv & ~(pv & within)).sum()
        denom = tp + fp + fn
        scores.append(1.0 if denom == 0 else tp / denom)
    return float(np.mean(scores))


def _iou(a: np.ndarray, b: np.ndarray) -> float:
    for box in (a, b):
        if box[2] < box[0] or box[3] < box[1]:
            raise ValueError(f"malformed box {box.tolist()} (min > max)")
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    if inter == 0.0:
        return 0.0
    area = ((a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter)
    return float(inter / area)


def mean_iou(pred_boxes: np.ndarray, gt_boxes: np.ndarray,
             valid: np.ndarray | None = None) -> float:
    """Mean IoU over (frame, box) pairs, frame 0 excluded.

    boxes: (T, B, 4) as (x_min, y_min, x_max, y_max), normalized. ``valid``
    masks (frame, box) pairs that have ground truth.
    """
    pred_boxes = np.asarray(pred_boxes, dtype=np.float64)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64)
    if pred_boxes.shape != gt_boxes.shape or pred_boxes.ndim != 3:
        raise ValueError("box arrays must share shape (frames, boxes, 4)")
    T, B, _ = pred_boxes.shape
    if valid is None:
        valid = np.ones((T, B), dtype=bool)
    vals = [
        _iou(pred_boxes[t, b], gt_boxes[t, b])
        for t in range(1, T) for b in range(B) if valid[t, b]
    ]
    if not vals:
        raise ValueError("no scored boxes (frame 0 is always excluded)")
    return float(np.mean(vals))


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1 or xs.size < 2:
        raise ValueError("pearson needs two equal-length 1-d inputs, n >= 2")
    xc, yc = xs - xs.mean(), ys - ys.mean()
    sx, sy = np.sqrt((xc * xc).sum()), np.sqrt((yc * yc).sum())
    if sx == 0.0 or sy == 0.0:
        raise ValueError("pearson undefined for zero-variance input")
    return float((xc * yc).sum() / (sx * sy))


def _average_ranks(xs: np.ndarray) -> np.ndarray:
    order = np.argsort(xs, kind="stable")
    ranks = np.empty(xs.size, dtype=np.float64)
    sx = xs[order]
    i = 0
    while i < xs.size:
        j = i
        while j + 1 < xs.size and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Rank correlation with average ranks for ties."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1 or xs.size < 2:
        raise ValueError("spearman needs two equal-length 1-d inputs, n >= 2")
    return pearson(_average_ranks(xs), _average_ranks(ys))


def relative_change(x_image: float, x_video: float, direction: str) -> float:
    """Signed fraction, positive when the video model does better."""
    if x_image == 0:
        raise ValueError("relative change undefined for x_image = 0")
    if direction == HIGHER:
        return (x_video - x_image) / x_image
    if direction == LOWER:
        return (x_image - x_video) / x_image
    raise ValueError(f"direction must be {HIGHER} or {LOWER}, got {direction!r}")
