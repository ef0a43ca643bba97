"""Recurrent predictor-corrector tracking head for points and boxes.

One latent per track. Each step: an MLP advances the latents, a cross-
attention corrector reads the current frame's tokens, an MLP emits the
targets. State at step t depends only on state at t-1 and frame-t features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import ndgrad as ng
from ..errors import ValidationError
from .common import CrossAttention, ParamBag, fourier_encode, register_head

__all__ = ["TrackHead", "track_rollout", "tracking_loss",
           "point_visibility_decision", "TrackTargets", "CERT_RADIUS"]

# certainty target: predicted position within this normalized distance of
# the ground truth (4 latent pixels on the default 8x8 grid)
CERT_RADIUS = 0.5

POINT, BOXTASK = "point", "box"


@dataclass
class TrackTargets:
    """Ground truth aligned with rollout outputs (frames 1..T-1)."""

    positions: np.ndarray          # (F, N, 2) points | (F, N, 4) boxes, normalized
    visible: np.ndarray | None     # (F, N) bool, points only
    in_scene: np.ndarray | None    # (F, N) bool; boxes: validity mask


@register_head
class TrackHead(ParamBag):
    kind = "track"

    def __init__(self, task: str = POINT, feat_dim: int = 128, state_dim: int = 128,
                 heads: int = 4, corrector_layers: int = 2, mlp_hidden: int = 512,
                 n_freqs: int = 6, seed: int = 0):
        super().__init__()
        if task not in (POINT, BOXTASK):
            raise ValidationError(f"task must be '{POINT}' or '{BOXTASK}'")
        self.config = dict(task=task, feat_dim=feat_dim, state_dim=state_dim,
                           heads=heads, corrector_layers=corrector_layers,
                           mlp_hidden=mlp_hidden, n_freqs=n_freqs, seed=seed)
        self.task = task
        self.state_dim = state_dim
        self.n_freqs = n_freqs
        self.query_dim = 2 if task == POINT else 4
        self.n_out = 4
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7AC4]))

        def normal(*shape, std=0.02):
            return (rng.standard_normal(shape) * std).astype(np.float32)

        fdim = 2 * self.query_dim * n_freqs
        self.add("init.w1", normal(fdim, mlp_hidden, std=1.0 / np.sqrt(fdim)))
        self.add("init.b1", np.zeros(mlp_hidden, dtype=np.float32))
        self.add("init.w2", normal(mlp_hidden, state_dim))
        self.add("init.b2", np.zeros(state_dim, dtype=np.float32))

        self.add("pred.w1", normal(state_dim, mlp_hidden))
        self.add("pred.b1", np.zeros(mlp_hidden, dtype=np.float32))
        self.add("pred.w2", normal(mlp_hidden, state_dim))
        self.add("pred.b2", np.zeros(state_dim, dtype=np.float32))

        self.corrector = []
        for i in range(corrector_layers):
            ca = CrossAttention(state_dim, feat_dim, state_dim, heads, rng)
            self.adopt(f"corr{i}.ca", ca)
            self.corrector.append(ca)
            p = f"corr{i}."
            self.add(p + "ln1.g", np.ones(state_dim, dtype=np.float32))
            self.add(p + "ln1.b", np.zeros(state_dim, dtype=np.float32))
            self.add(p + "mlp.w1", normal(state_dim, mlp_hidden))
            self.add(p + "mlp.b1", np.zeros(mlp_hidden, dtype=np.float32))
            self.add(p + "mlp.w2", normal(mlp_hidden, state_dim))
            self.add(p + "mlp.b2", np.zeros(state_dim, dtype=np.float32))
            self.add(p + "ln2.g", np.ones(state_dim, dtype=np.float32))
            self.add(p + "ln2.b", np.zeros(state_dim, dtype=np.float32))

        self.add("out.w1", normal(state_dim, mlp_hidden))
        self.add("out.b1", np.zeros(mlp_hidden, dtype=np.float32))
        self.add("out.w2", normal(mlp_hidden, self.n_out))
        self.add("out.b2", np.zeros(self.n_out, dtype=np.float32))

    # ----------------------------------------------------------- pieces
    def init_state(self, queries: np.ndarray) -> ng.Tensor:
        """Queries (B, N, qd) normalized -> initial track latents (B, N, S)."""
        queries = np.asarray(queries, dtype=np.float32)
        if queries.ndim != 3 or queries.shape[-1] != self.query_dim:
            raise ValidationError(f"queries must be (B, N, {self.query_dim})")
        P = self.params
        enc = ng.const(fourier_encode(queries, self.n_freqs))
        h = ng.gelu(ng.linear(enc, P["init.w1"], P["init.b1"]))
        return ng.linear(h, P["init.w2"], P["init.b2"])

    def _predict(self, state: ng.Tensor) -> ng.Tensor:
        P = self.params
        h = ng.gelu(ng.linear(state, P["pred.w1"], P["pred.b1"]))
        return ng.add(state, ng.linear(h, P["pred.w2"], P["pred.b2"]))

    def _correct(self, state: ng.Tensor, feats: ng.Tensor) -> ng.Tensor:
        P = self.params
        for i, ca in enumerate(self.corrector):
            p = f"corr{i}."
            state = ng.add(state, ca(
                ng.layer_norm(state, P[p + "ln1.g"], P[p + "ln1.b"]), feats))
            h = ng.layer_norm(state, P[p + "ln2.g"], P[p + "ln2.b"])
            state = ng.add(state, ng.linear(
                ng.gelu(ng.linear(h, P[p + "mlp.w1"], P[p + "mlp.b1"])),
                P[p + "mlp.w2"], P[p + "mlp.b2"]))
        return state

    def _emit(self, state: ng.Tensor) -> ng.Tensor:
        P = self.params
        h = ng.gelu(ng.linear(state, P["out.w1"], P["out.b1"]))
        return ng.linear(h, P["out.w2"], P["out.b2"])

    def step(self, state: ng.Tensor, frame_feats) -> tuple[ng.Tensor, ng.Tensor]:
        """(state_{t-1}, frame-t tokens (B, n, d)) -> (state_t, outputs (B, N, 4))."""
        feats = frame_feats if isinstance(frame_feats, ng.Tensor) else ng.const(frame_feats)
        if feats.data.ndim != 3 or feats.data.shape[0] != state.data.shape[0]:
            raise ValidationError("frame features must be (B, tokens, d) matching state")
        state = self._correct(self._predict(state), feats)
        return state, self._emit(state)


def track_rollout(head: TrackHead, frame_feats: np.ndarray, queries: np.ndarray
                  ) -> ng.Tensor:
    """Run a full clip: features (B, T, n, d), queries (B, N, qd).

    Returns predictions (B, T-1, N, 4) for frames 1..T-1 (queries are at
    frame 0).
    """
    feats = np.asarray(frame_feats, dtype=np.float32)
    if feats.ndim != 4:
        raise ValidationError("rollout features must be (B, T, tokens, d)")
    state = head.init_state(queries)
    outs = []
    for t in range(1, feats.shape[1]):
        state, out = head.step(state, feats[:, t])
        outs.append(ng.reshape(out, (out.data.shape[0], 1) + out.data.shape[1:]))
    return ng.concat(outs, axis=1)


def point_visibility_decision(vis_logit, cert_logit):
    """Visible iff both sigmoid probabilities strictly exceed one half."""
    vis = np.asarray(vis_logit, dtype=np.float64)
    cert = np.asarray(cert_logit, dtype=np.float64)
    return (_sigmoid(vis) > 0.5) & (_sigmoid(cert) > 0.5)


def _sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def tracking_loss(preds: ng.Tensor, targets: TrackTargets, task: str,
                  cert_radius: float = CERT_RADIUS) -> ng.Tensor:
    """Combined rollout loss over frames 1..T-1.

    Points: Huber on positions and BCE on certainty for in-scene tracks,
    BCE on visibility everywhere. The certainty target is 1 where the
    (stop-gradient) predicted position lands within ``cert_radius`` of the
    ground truth. Boxes: mean squared coordinate error over valid pairs.
    """
    pos_dim = 2 if task == POINT else 4
    gt_pos = np.asarray(targets.positions, dtype=np.float32)
    if preds.data.shape[:-1] != gt_pos.shape[:-1] or gt_pos.shape[-1] != pos_dim:
        raise ValidationError(f"prediction shape {preds.data.shape} does not align "
                              f"with targets {gt_pos.shape}")

    if task == BOXTASK:
        valid = (np.ones(gt_pos.shape[:-1], bool) if targets.in_scene is None
                 else np.asarray(targets.in_scene, bool))
        mask = np.broadcast_to(valid[..., None], gt_pos.shape).astype(np.float32)
        n = max(float(valid.sum()) * pos_dim, 1.0)
        diff = ng.sub(preds, ng.const(gt_pos))
        sq = ng.mul(diff, diff)
        return ng.mul(ng.sum_(ng.mul(sq, ng.const(mask))), ng.const(1.0 / n))

    vis = np.asarray(targets.visible, bool)
    in_scene = np.asarray(targets.in_scene, bool)
    pos = ng.slice_axis(preds, preds.data.ndim - 1, 0, 2)
    vis_logit = ng.reshape(ng.slice_axis(preds, preds.data.ndim - 1, 2, 3), vis.shape)
    cert_logit = ng.reshape(ng.slice_axis(preds, preds.data.ndim - 1, 3, 4), vis.shape)

    in_mask = np.broadcast_to(in_scene[..., None], gt_pos.shape).astype(np.float32)
    n_in = max(float(in_scene.sum()), 1.0)
    hub = ng.huber(pos, ng.const(gt_pos))
    loss_pos = ng.mul(ng.sum_(ng.mul(hub, ng.const(in_mask))),
                      ng.const(1.0 / (2.0 * n_in)))

    loss_vis = ng.mean(ng.bce_with_logits(vis_logit, ng.const(vis.astype(np.float32))))

    err = np.linalg.norm(preds.data[..., :2] - gt_pos, axis=-1)  # stop-gradient
    cert_target = (err <= cert_radius).astype(np.float32)
    cert_bce = ng.bce_with_logits(cert_logit, ng.const(cert_target))
    loss_cert = ng.mul(ng.sum_(ng.mul(cert_bce, ng.const(in_scene.astype(np.float32)))),
                       ng.const(1.0 / n_in))

    return ng.add(ng.add(loss_pos, loss_vis), loss_cert)
