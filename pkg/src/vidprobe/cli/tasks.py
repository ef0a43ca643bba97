"""Task adapters: features + labels in, trained head + one metric out.

Each adapter precomputes frozen features for its datasets, then exposes
``batch_loss`` for the optimizer loop and ``evaluate`` for the metric.
Backbone parameters never enter the readout tape (features are constants).
"""

from __future__ import annotations

import numpy as np

from .. import metrics as M
from .. import ndgrad as ng
from ..backbone import BackboneModel
from ..errors import ValidationError
from ..probe import FeatureStack, ProbeSpec, extract_features, interpolate_temporal
from ..readouts import (AttentiveHead, DepthHead, PoseHead, TrackHead,
                        TrackTargets, attentive_classify, latent_grid_queries,
                        point_visibility_decision, pose_forward, track_rollout,
                        tracking_loss)
from ..synthworld import ACTIONS, KINDS, SceneSample
from .config import ExperimentConfig

__all__ = ["TASKS", "make_adapter", "clip_features", "bilinear_upsample"]

TASKS = ("cls", "action", "depth", "pose", "point", "box")


def clip_features(model: BackboneModel, samples: list[SceneSample],
                  spec: ProbeSpec, checkpoint_id: str = "") -> list[FeatureStack]:
    return [extract_features(model, s.video, spec, checkpoint_id) for s in samples]


def bilinear_upsample(grid: np.ndarray, H: int, W: int) -> np.ndarray:
    """(h, w) -> (H, W), cell centers aligned."""
    h, w = grid.shape
    ys = (np.arange(H) + 0.5) * h / H - 0.5
    xs = (np.arange(W) + 0.5) * w / W - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    top = grid[np.ix_(y0, x0)] * (1 - fx) + grid[np.ix_(y0, x1)] * fx
    bot = grid[np.ix_(y1, x0)] * (1 - fx) + grid[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


class _Adapter:
    task: str
    metric: str
    direction: str

    def __init__(self, model: BackboneModel, train: list[SceneSample],
                 eval_: list[SceneSample], spec: ProbeSpec, cfg: ExperimentConfig):
        self.model = model
        self.cfg = cfg
        self.spec = spec
        self.train_feats = clip_features(model, train, spec)
        self.eval_feats = clip_features(model, eval_, spec)
        self.train_samples = train
        self.eval_samples = eval_
        self.prepare()

    def prepare(self) -> None:
        pass

    @property
    def n_train(self) -> int:
        return len(self.train_samples)

    def build_head(self, seed: int):
        raise NotImplementedError

    def batch_loss(self, head, idxs: np.ndarray) -> ng.Tensor:
        raise NotImplementedError

    def evaluate(self, head) -> float:
        raise NotImplementedError


class _ClassifyAdapter(_Adapter):
    """Attentive classification; subclasses pick tokens and labels."""

    n_classes = 1

    def tokens_of(self, feats: FeatureStack) -> np.ndarray:
        raise NotImplementedError

    def label_of(self, sample: SceneSample) -> int:
        raise NotImplementedError

    def prepare(self) -> None:
        self.x_train = np.stack([self.tokens_of(f) for f in self.train_feats])
        self.y_train = np.array([self.label_of(s) for s in self.train_samples])
        self.x_eval = np.stack([self.tokens_of(f) for f in self.eval_feats])
        self.y_eval = np.array([self.label_of(s) for s in self.eval_samples])

    def build_head(self, seed: int):
        return AttentiveHead(dim=self.model.config.embed_dim, n_out=self.n_classes,
                             heads=self.cfg["readout.heads"],
                             mlp_hidden=self.cfg["readout.mlp_hidden"], seed=seed)

    def batch_loss(self, head, idxs):
        _, loss = attentive_classify(head, self.x_train[idxs], self.y_train[idxs])
        return loss

    def evaluate(self, head) -> float:
        with ng.no_tape():
            logits, _ = attentive_classify(head, self.x_eval)
        return M.top1(logits.data, self.y_eval)


class ClsAdapter(_ClassifyAdapter):
    """Object-kind classification, image-task style: frame axis mean-pooled."""

    task, metric, direction = "cls", "top1", M.HIGHER
    n_classes = len(KINDS)

    def tokens_of(self, feats):
        return feats.activations.mean(axis=0)

    def label_of(self, sample):
        return sample.class_label


class ActionAdapter(_ClassifyAdapter):
    """Action recognition: the query attends over every frame's tokens."""

    task, metric, direction = "action", "top1", M.HIGHER
    n_classes = len(ACTIONS)

    def tokens_of(self, feats):
        F, n, d = feats.activations.shape
        return feats.activations.reshape(F * n, d)

    def label_of(self, sample):
        return sample.action_label


class DepthAdapter(_Adapter):
    """Latent-grid depth decoding per latent frame, upsampled for scoring."""

    task, metric, direction = "depth", "abs_rel_err", M.LOWER

    def prepare(self) -> None:
        cfg = self.model.config
        self.queries = latent_grid_queries(cfg.latent_h, cfg.latent_w)
        self.rep_frames = [0] + [k * cfg.temporal_patch
                                 for k in range(1, cfg.latent_frames)]
        self.gt_train, self.mask_train = self._targets(self.train_samples)
        self.gt_eval, _ = self._targets(self.eval_samples)

    def _targets(self, samples):
        """Per-cell mean of valid depths at each representative frame."""
        cfg = self.model.config
        h, w, ps = cfg.latent_h, cfg.latent_w, cfg.spatial_patch
        gts, masks = [], []
        for s in samples:
            cells = np.zeros((cfg.latent_frames, h * w), np.float32)
            mask = np.zeros((cfg.latent_frames, h * w), np.float32)
            for i, rf in enumerate(self.rep_frames):
                d = s.depth[rf].reshape(h, ps, w, ps).transpose(0, 2, 1, 3).reshape(h * w, -1)
                valid = d > 1e-3
                cnt = valid.sum(axis=1)
                with np.errstate(invalid="ignore"):
                    cells[i] = np.where(cnt > 0, (d * valid).sum(axis=1) / np.maximum(cnt, 1), 0.0)
                mask[i] = cnt > 0
            gts.append(cells)
            masks.append(mask)
        return np.stack(gts), np.stack(masks)

    def build_head(self, seed: int):
        d = self.model.config.embed_dim
        return DepthHead(dim=d, heads=2, mlp_hidden=d,
                         n_layers=1, n_freqs=self.cfg["readout.fourier_freqs"],
                         seed=seed)

    def batch_loss(self, head, idxs):
        F = self.model.config.latent_frames
        tokens = np.concatenate([self.train_feats[i].activations for i in idxs])
        pred = head.forward(ng.const(tokens), self.queries)          # (B*F, P)
        gt = self.gt_train[idxs].reshape(pred.data.shape)
        mask = self.mask_train[idxs].reshape(pred.data.shape)
        n = max(float(mask.sum()), 1.0)
        diff = ng.sub(pred, ng.const(gt))
        sq = ng.mul(diff, diff)
        return ng.mul(ng.sum_(ng.mul(sq, ng.const(mask))), ng.const(1.0 / n))

    def evaluate(self, head) -> float:
        cfg = self.model.config
        h, w = cfg.latent_h, cfg.latent_w
        preds, gts = [], []
        for feats, s in zip(self.eval_feats, self.eval_samples):
            with ng.no_tape():
                grid = head.forward(ng.const(feats.activations), self.queries)
            for i, rf in enumerate(self.rep_frames):
                up = bilinear_upsample(grid.data[i].reshape(h, w),
                                       cfg.height, cfg.width)
                preds.append(up)
                gts.append(s.depth[rf])
        return M.abs_rel_err(np.stack(preds), np.stack(gts))


class PoseAdapter(_Adapter):
    task, metric, direction = "pose", "epe", M.LOWER

    def prepare(self) -> None:
        self.f_train = [(f.activations[0], f.activations[-1]) for f in self.train_feats]
        self.f_eval = [(f.activations[0], f.activations[-1]) for f in self.eval_feats]
        self.gt_train = np.stack([s.pose for s in self.train_samples])
        self.gt_eval = np.stack([s.pose for s in self.eval_samples])

    def build_head(self, seed: int):
        return PoseHead(dim=self.model.config.embed_dim,
                        heads=self.cfg["readout.heads"],
                        mlp_hidden=self.cfg["readout.mlp_hidden"], seed=seed)

    def batch_loss(self, head, idxs):
        f0 = np.stack([self.f_train[i][0] for i in idxs])
        f1 = np.stack([self.f_train[i][1] for i in idxs])
        _, _, loss = pose_forward(head, f0, f1, pose_gt=self.gt_train[idxs])
        return loss

    def evaluate(self, head) -> float:
        f0 = np.stack([p[0] for p in self.f_eval])
        f1 = np.stack([p[1] for p in self.f_eval])
        with ng.no_tape():
            proj, _, _ = pose_forward(head, f0, f1)
        return float(np.mean([M.epe(proj[i], self.gt_eval[i])
                              for i in range(len(self.eval_samples))]))


class PointAdapter(_Adapter):
    task, metric, direction = "point", "aj", M.HIGHER

    def prepare(self) -> None:
        cfg = self.model.config
        self.size = np.array([cfg.width, cfg.height], np.float32)
        self.latent_scale = cfg.latent_w
        self.seq_train = np.stack([interpolate_temporal(f, cfg.frames)
                                   for f in self.train_feats])
        self.seq_eval = np.stack([interpolate_temporal(f, cfg.frames)
                                  for f in self.eval_feats])

        def pack(samples):
            q = np.stack([s.tracks_xy[0] / self.size for s in samples])
            pos = np.stack([s.tracks_xy[1:] / self.size for s in samples])
            vis = np.stack([s.tracks_vis[1:] for s in samples])
            ins = np.stack([s.tracks_in[1:] for s in samples])
            return q.astype(np.float32), pos.astype(np.float32), vis, ins

        self.q_train, self.pos_train, self.vis_train, self.in_train = pack(self.train_samples)
        self.q_eval, self.pos_eval, self.vis_eval, self.in_eval = pack(self.eval_samples)
        self.thresholds = self.cfg.float_list("aj.thresholds")

    def build_head(self, seed: int):
        cfg = self.model.config
        return TrackHead(task="point", feat_dim=cfg.embed_dim,
                         state_dim=self.cfg["readout.state_dim"],
                         heads=self.cfg["readout.heads"],
                         corrector_layers=self.cfg["readout.track_layers"],
                         mlp_hidden=self.cfg["readout.mlp_hidden"],
                         n_freqs=self.cfg["readout.fourier_freqs"], seed=seed)

    def batch_loss(self, head, idxs):
        preds = track_rollout(head, self.seq_train[idxs], self.q_train[idxs])
        targets = TrackTargets(positions=self.pos_train[idxs],
                               visible=self.vis_train[idxs],
                               in_scene=self.in_train[idxs])
        return tracking_loss(preds, targets, "point")

    def evaluate(self, head) -> float:
        scores = []
        for i in range(0, len(self.eval_samples), 8):
            sl = slice(i, i + 8)
            with ng.no_tape():
                preds = track_rollout(head, self.seq_eval[sl], self.q_eval[sl])
            p = preds.data
            pv = point_visibility_decision(p[..., 2], p[..., 3])
            for b in range(p.shape[0]):
                scores.append(M.average_jaccard(
                    p[b, :, :, :2] * self.latent_scale, pv[b],
                    self.pos_eval[sl][b] * self.latent_scale, self.vis_eval[sl][b],
                    thresholds=self.thresholds, query_frame=-1))
        return float(np.mean(scores))


class BoxAdapter(_Adapter):
    task, metric, direction = "box", "mean_iou", M.HIGHER

    def prepare(self) -> None:
        cfg = self.model.config
        self.seq_train = np.stack([interpolate_temporal(f, cfg.frames)
                                   for f in self.train_feats])
        self.seq_eval = np.stack([interpolate_temporal(f, cfg.frames)
                                  for f in self.eval_feats])

        def pack(samples):
            B = max(s.boxes.shape[1] for s in samples)
            n = len(samples)
            T = samples[0].boxes.shape[0]
            q = np.full((n, B, 4), 0.5, np.float32)
            gt = np.zeros((n, T - 1, B, 4), np.float32)
            valid = np.zeros((n, T - 1, B), bool)
            for i, s in enumerate(samples):
                b = s.boxes.shape[1]
                live = s.boxes_valid[0]
                q[i, :b][live] = s.boxes[0][live]
                gt[i, :, :b] = s.boxes[1:]
                valid[i, :, :b] = s.boxes_valid[1:] & live[None, :]
            return q, gt, valid

        self.q_train, self.gt_train, self.valid_train = pack(self.train_samples)
        self.q_eval, self.gt_eval, self.valid_eval = pack(self.eval_samples)

    def build_head(self, seed: int):
        cfg = self.model.config
        return TrackHead(task="box", feat_dim=cfg.embed_dim,
                         state_dim=self.cfg["readout.state_dim"],
                         heads=self.cfg["readout.heads"],
                         corrector_layers=self.cfg["readout.track_layers"],
                         mlp_hidden=self.cfg["readout.mlp_hidden"],
                         n_freqs=self.cfg["readout.fourier_freqs"], seed=seed)

    def batch_loss(self, head, idxs):
        preds = track_rollout(head, self.seq_train[idxs], self.q_train[idxs])
        targets = TrackTargets(positions=self.gt_train[idxs], visible=None,
                               in_scene=self.valid_train[idxs])
        return tracking_loss(preds, targets, "box")

    def evaluate(self, head) -> float:
        with ng.no_tape():
            preds = track_rollout(head, self.seq_eval, self.q_eval)
        vals = []
        for i in range(len(self.eval_samples)):
            p = preds.data[i]
            lo = np.minimum(p[..., :2], p[..., 2:])
            hi = np.maximum(p[..., :2], p[..., 2:])
            pred = np.concatenate([lo, hi], axis=-1)
            T1, B = p.shape[:2]
            full_pred = np.concatenate([self.gt_eval[i][:1], pred])
            full_gt = np.concatenate([self.gt_eval[i][:1], self.gt_eval[i]])
            full_valid = np.concatenate([np.zeros((1, B), bool), self.valid_eval[i]])
            if full_valid.any():
                vals.append(M.mean_iou(full_pred, full_gt, valid=full_valid))
        if not vals:
            raise ValidationError("box evaluation has no valid ground truth")
        return float(np.mean(vals))


_ADAPTERS = {a.task: a for a in
             (ClsAdapter, ActionAdapter, DepthAdapter, PoseAdapter,
              PointAdapter, BoxAdapter)}


def make_adapter(task: str, model: BackboneModel, train: list[SceneSample],
                 eval_: list[SceneSample], spec: ProbeSpec,
                 cfg: ExperimentConfig) -> _Adapter:
    if task not in _ADAPTERS:
        raise ValidationError(f"unknown task {task!r}; choose from {TASKS}")
    return _ADAPTERS[task](model, train, eval_, spec, cfg)
