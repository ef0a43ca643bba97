"""Seeded scene sampling: video, depth, tracks, boxes, pose, labels.

All ground truths derive from the same rendered geometry; there is no
independent label path. Same spec (same seed) -> byte-identical sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional, Tuple

import numpy as np

from ..errors import ValidationError
from .render import GROUND_ID, cast_rays, render_frame
from .scene import BOX, CONE, KINDS, NEAR_PLANE, SPHERE, Camera, SceneObject

__all__ = ["SceneSpec", "SceneSample", "ACTIONS", "CAMERA_MOVES", "Timeline",
           "build_timeline", "render_timeline", "generate",
           "MIN_BOX_AREA_FRAC", "MAX_BOXES", "N_TRACKS"]

ACTIONS = ("translate_lr", "translate_rl", "approach", "recede", "rotate", "static")
CAMERA_MOVES = ("static", "translate", "orbit")

N_TRACKS = 64
MIN_BOX_AREA_FRAC = 0.005
MAX_BOXES = 25

_SCENE_ANCHOR = np.array([0.0, 0.0, 4.0])
_COLOR_PALETTE = (
    (0.85, 0.25, 0.25),
    (0.25, 0.45, 0.85),
    (0.90, 0.75, 0.20),
    (0.30, 0.70, 0.35),
)


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    n_objects: int = 3
    action: str = "static"
    camera: str = "static"
    frames: int = 9
    height: int = 64
    width: int = 64
    kinds: Optional[Tuple[str, ...]] = None
    n_tracks: int = N_TRACKS

    def __post_init__(self):
        if not (2 <= self.n_objects <= 6):
            raise ValidationError(f"object count must lie in [2, 6], got {self.n_objects}")
        if self.action not in ACTIONS:
            raise ValidationError(f"action must be one of {ACTIONS}")
        if self.camera not in CAMERA_MOVES:
            raise ValidationError(f"camera must be one of {CAMERA_MOVES}")
        if self.kinds is not None and (len(self.kinds) != self.n_objects
                                       or any(k not in KINDS for k in self.kinds)):
            raise ValidationError(f"kinds must be {self.n_objects} of {KINDS}")


@dataclass
class SceneSample:
    video: np.ndarray        # (T, H, W, 3) u8
    depth: np.ndarray        # (T, H, W) f32 camera z, 0 = sky
    tracks_xy: np.ndarray    # (T, K, 2) f32 pixel coords
    tracks_vis: np.ndarray   # (T, K) bool
    tracks_in: np.ndarray    # (T, K) bool, still in frame and ahead of camera
    boxes: np.ndarray        # (T, B, 4) f32 normalized x_min,y_min,x_max,y_max
    boxes_valid: np.ndarray  # (T, B) bool
    pose: np.ndarray         # (3, 4) f32 first->last camera transform
    class_label: int
    action_label: int


@dataclass
class Timeline:
    """Resolved per-frame geometry: objects with trajectories plus cameras."""

    objects: list
    cameras: list
    class_label: int
    action_label: int


def _object_motion(action: str, base: np.ndarray, frames: int, speed: float,
                   spin: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame positions and yaws for one object under a motion program."""
    ts = np.arange(frames, dtype=np.float64)
    pos = np.tile(base, (frames, 1))
    yaw = spin * ts
    if action == "translate_lr":
        pos[:, 0] += speed * ts
    elif action == "translate_rl":
        pos[:, 0] -= speed * ts
    elif action == "approach":
        pos[:, 2] -= speed * ts
    elif action == "recede":
        pos[:, 2] += speed * ts
    elif action == "rotate":
        ang = 2.5 * spin * ts
        rel = base - _SCENE_ANCHOR
        pos = np.stack([
            _SCENE_ANCHOR[0] + rel[0] * np.cos(ang) + rel[2] * np.sin(ang),
            np.full(frames, base[1]),
            _SCENE_ANCHOR[2] - rel[0] * np.sin(ang) + rel[2] * np.cos(ang),
        ], axis=1)
        yaw = ang
    elif action == "static":
        yaw = np.zeros(frames)
    return pos, yaw


def _camera_track(move: str, frames: int, width: int, height: int) -> list[Camera]:
    target = (0.0, 0.6, 4.0)
    cams = []
    for f in range(frames):
        u = f / max(frames - 1, 1)
        if move == "static":
            eye = (0.0, 1.3, 0.0)
        elif move == "translate":
            eye = (-0.4 + 0.8 * u, 1.3, 0.0)
        else:  # orbit around the scene anchor
            ang = (-0.5 + u) * 0.45
            eye = (4.0 * np.sin(ang), 1.3, 4.0 - 4.0 * np.cos(ang))
        cams.append(Camera(eye=eye, target=target, width=width, height=height))
    return cams


def build_timeline(spec: SceneSpec) -> Timeline:
    """Sample objects from the seed and resolve every trajectory."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x5CE2E]))
    kinds = (list(spec.kinds) if spec.kinds is not None
             else [KINDS[i] for i in rng.integers(0, len(KINDS), spec.n_objects)])
    # lay objects on a jittered arc so they seldom start fully overlapped
    slots = rng.permutation(spec.n_objects)
    objects = []
    for i in range(spec.n_objects):
        size = float(rng.uniform(0.35, 0.6))
        lane = (slots[i] - (spec.n_objects - 1) / 2.0)
        base = np.array([
            lane * 1.0 + rng.uniform(-0.25, 0.25),
            0.0,
            float(rng.uniform(3.2, 5.4)),
        ])
        speed = float(rng.uniform(0.14, 0.2))
        spin = float(rng.uniform(0.08, 0.16))
        color = _COLOR_PALETTE[int(rng.integers(0, len(_COLOR_PALETTE)))]
        aspect = float(rng.uniform(0.9, 1.4)) if kinds[i] != SPHERE else 1.0
        if kinds[i] == CONE:
            aspect *= 2.0
        pos, yaw = _object_motion(spec.action, base, spec.frames, speed, spin)
        objects.append(SceneObject(kind=kinds[i], size=size, color=color,
                                   positions=pos, yaws=yaw, aspect=aspect))
    cams = _camera_track(spec.camera, spec.frames, spec.width, spec.height)
    return Timeline(objects=objects, cameras=cams,
                    class_label=KINDS.index(kinds[0]),
                    action_label=ACTIONS.index(spec.action))


def _sample_track_anchors(timeline: Timeline, rng: np.random.Generator,
                          n_tracks: int, id0: np.ndarray, depth0: np.ndarray):
    """Pick query pixels on frame 0 and bind them to surfaces.

    Anchors are object-local coordinates (or fixed world points for the
    ground); object pixels are preferred 3:1 so tracks exercise motion.
    """
    cam = timeline.cameras[0]
    H, W = cam.height, cam.width
    flat_id = id0.reshape(-1)
    obj_candidates = np.flatnonzero(flat_id >= 0)
    gnd_candidates = np.flatnonzero(flat_id == GROUND_ID)
    n_obj = min(len(obj_candidates), (3 * n_tracks) // 4)
    n_gnd = min(len(gnd_candidates), n_tracks - n_obj)
    n_obj = min(len(obj_candidates), n_tracks - n_gnd)
    pick = []
    if n_obj:
        pick.append(rng.choice(obj_candidates, size=n_obj, replace=False))
    if n_gnd:
        pick.append(rng.choice(gnd_candidates, size=n_gnd, replace=False))
    pixels = np.concatenate(pick) if pick else np.empty(0, dtype=np.intp)
    if pixels.size < n_tracks:  # degenerate view: recycle what exists
        extra = rng.choice(pixels, size=n_tracks - pixels.size, replace=True)
        pixels = np.concatenate([pixels, extra])

    origin = np.asarray(cam.eye, dtype=np.float64)
    dirs = cam.pixel_rays()[pixels]
    t0 = depth0.reshape(-1)[pixels].astype(np.float64)
    world0 = origin + t0[:, None] * dirs
    owner = flat_id[pixels]
    anchors = []
    for p, oid in zip(world0, owner):
        if oid >= 0:
            anchors.append((int(oid), timeline.objects[oid].to_local(0, p)[0]))
        else:
            anchors.append((GROUND_ID, p))
    return anchors


def _track_points(timeline: Timeline, anchors, frame: int
                  ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project anchors into one frame; exact ray casting decides occlusion."""
    cam = timeline.cameras[frame]
    world = np.stack([
        timeline.objects[oid].to_world(frame, local)[0] if oid >= 0 else local
        for oid, local in anchors
    ])
    uv, z = cam.project_many(world)
    ahead = z > NEAR_PLANE
    inside = (ahead & (uv[:, 0] >= 0) & (uv[:, 0] <= cam.width - 1)
              & (uv[:, 1] >= 0) & (uv[:, 1] <= cam.height - 1))
    origin = np.asarray(cam.eye, dtype=np.float64)
    rays = world - origin  # parameterized so the point sits at t = 1
    t_near, _ = cast_rays(timeline.objects, frame, origin, rays)
    unoccluded = t_near >= 1.0 - 1e-4
    visible = inside & unoccluded
    return uv.astype(np.float32), visible, inside


def _frame_boxes(ids: np.ndarray, n_objects: int, W: int, H: int) -> np.ndarray:
    """Normalized visible-pixel bounding box per object, -1 when absent."""
    out = np.full((n_objects, 4), -1.0, dtype=np.float32)
    for i in range(n_objects):
        ys, xs = np.nonzero(ids == i)
        if xs.size == 0:
            continue
        out[i] = [xs.min() / W, ys.min() / H, (xs.max() + 1) / W, (ys.max() + 1) / H]
    return out


def render_timeline(timeline: Timeline, spec: SceneSpec) -> SceneSample:
    T, H, W = spec.frames, spec.height, spec.width
    n_obj = len(timeline.objects)
    video = np.empty((T, H, W, 3), dtype=np.uint8)
    depth = np.empty((T, H, W), dtype=np.float32)
    raw_boxes = np.empty((T, n_obj, 4), dtype=np.float32)
    id0 = None
    for f in range(T):
        rgb, d, ids = render_frame(timeline.objects, timeline.cameras[f], f)
        video[f], depth[f] = rgb, d
        raw_boxes[f] = _frame_boxes(ids, n_obj, W, H)
        if f == 0:
            id0 = ids

    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x7AC5]))
    anchors = _sample_track_anchors(timeline, rng, spec.n_tracks, id0, depth[0])
    K = len(anchors)
    tracks_xy = np.zeros((T, K, 2), dtype=np.float32)
    tracks_vis = np.zeros((T, K), dtype=bool)
    tracks_in = np.zeros((T, K), dtype=bool)
    for f in range(T):
        tracks_xy[f], tracks_vis[f], tracks_in[f] = _track_points(timeline, anchors, f)

    # box filtering follows the first frame: tiny boxes are dropped, the
    # largest MAX_BOXES survive
    area0 = np.where((raw_boxes[0, :, 0] >= 0),
                     (raw_boxes[0, :, 2] - raw_boxes[0, :, 0])
                     * (raw_boxes[0, :, 3] - raw_boxes[0, :, 1]), 0.0)
    keep = np.flatnonzero(area0 >= MIN_BOX_AREA_FRAC)
    keep = keep[np.argsort(-area0[keep], kind="stable")][:MAX_BOXES]
    keep = np.sort(keep)
    boxes = raw_boxes[:, keep]
    boxes_valid = boxes[:, :, 0] >= 0

    E0 = timeline.cameras[0].extrinsic()
    E1 = timeline.cameras[-1].extrinsic()
    R_rel = E1[:, :3] @ E0[:, :3].T
    t_rel = E1[:, 3] - R_rel @ E0[:, 3]
    pose = np.hstack([R_rel, t_rel[:, None]]).astype(np.float32)

    return SceneSample(video=video, depth=depth, tracks_xy=tracks_xy,
                       tracks_vis=tracks_vis, tracks_in=tracks_in,
                       boxes=boxes.astype(np.float32), boxes_valid=boxes_valid,
                       pose=pose, class_label=timeline.class_label,
                       action_label=timeline.action_label)


def generate(spec: SceneSpec) -> SceneSample:
    """Deterministic sample: rasterized video plus every task's ground truth."""
    if spec.n_objects == 0:
        raise ValidationError("degenerate spec: zero objects")
    return render_timeline(build_timeline(spec), spec)
