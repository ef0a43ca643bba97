"""Ray-cast rasterizer with z-buffer semantics.

Rays are depth-parameterized (unit camera-z component), so intersection
parameters are camera-space depths directly. Flat shading: one solid color
per object, checkerboard ground, constant sky. Everything is vectorized
over rays and fully deterministic.
"""

from __future__ import annotations

import numpy as np

from .scene import BOX, CONE, NEAR_PLANE, SPHERE, Camera, SceneObject, yaw_matrix

__all__ = ["intersect", "cast_rays", "render_frame", "GROUND_ID", "SKY_ID",
           "GROUND_COLORS", "SKY_COLOR", "CHECKER_CELL"]

SKY_ID = -2
GROUND_ID = -1

GROUND_COLORS = (np.array([0.32, 0.32, 0.34]), np.array([0.55, 0.55, 0.58]))
SKY_COLOR = np.array([0.72, 0.78, 0.84])
CHECKER_CELL = 1.0

_INF = np.float64(np.inf)


def _sphere_hits(center, radius, o, d):
    oc = o - center
    a = (d * d).sum(axis=1)
    b = 2.0 * (d @ oc)
    c = oc @ oc - radius * radius
    disc = b * b - 4.0 * a * c
    hit = disc >= 0.0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t1 = (-b - sq) / (2.0 * a)
    t2 = (-b + sq) / (2.0 * a)
    t = np.where(t1 > NEAR_PLANE, t1, t2)
    return np.where(hit & (t > NEAR_PLANE), t, _INF)


def _box_hits(half: np.ndarray, o_local, d_local):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d_local
    lo = (-half - o_local) * inv
    hi = (half - o_local) * inv
    tmin = np.minimum(lo, hi).max(axis=1)
    tmax = np.maximum(lo, hi).min(axis=1)
    hit = (tmax >= tmin) & (tmax > NEAR_PLANE)
    t = np.where(tmin > NEAR_PLANE, tmin, tmax)
    return np.where(hit, t, _INF)


def _cone_hits(radius, height, o_local, d_local):
    """Vertical cone, base disk at y=0, apex at y=height."""
    k = radius / height
    px, py, pz = o_local
    dx, dy, dz = d_local[:, 0], d_local[:, 1], d_local[:, 2]
    A = dx * dx + dz * dz - (k * k) * dy * dy
    B = 2.0 * (px * dx + pz * dz + (k * k) * dy * (height - py))
    C = px * px + pz * pz - (k * k) * (height - py) ** 2
    disc = B * B - 4.0 * A * C
    hit = (disc >= 0.0) & (np.abs(A) > 1e-12)
    sq = np.sqrt(np.where(hit, disc, 0.0))
    best = np.full(dx.shape, _INF)
    for sign in (-1.0, 1.0):
        t = np.where(hit, (-B + sign * sq) / (2.0 * A), _INF)
        y = py + t * dy
        ok = hit & (t > NEAR_PLANE) & (y >= 0.0) & (y <= height)
        best = np.where(ok & (t < best), t, best)
    # base disk
    with np.errstate(divide="ignore", invalid="ignore"):
        tb = -py / dy
    bx = px + tb * dx
    bz = pz + tb * dz
    ok = (tb > NEAR_PLANE) & (bx * bx + bz * bz <= radius * radius)
    return np.where(ok & (tb < best), tb, best)


def intersect(obj: SceneObject, frame: int, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Depth parameter of the nearest hit per ray, inf on miss."""
    pos = obj.positions[frame]
    if obj.kind == SPHERE:
        center = pos + np.array([0.0, obj.size, 0.0])
        return _sphere_hits(center, obj.size, origin, dirs)
    R = yaw_matrix(-float(obj.yaws[frame]))
    o_local = R @ (origin - pos)
    d_local = dirs @ R.T
    if obj.kind == BOX:
        hy = obj.size * obj.aspect
        o_local = o_local - np.array([0.0, hy, 0.0])
        half = np.array([obj.size, hy, obj.size])
        return _box_hits(half, o_local, d_local)
    if obj.kind == CONE:
        return _cone_hits(obj.size, obj.size * obj.aspect, o_local, d_local)
    raise ValueError(f"unknown object kind {obj.kind!r}")


def _ground_hits(origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    dy = dirs[:, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -origin[1] / dy
    return np.where((np.abs(dy) > 1e-12) & (t > NEAR_PLANE), t, _INF)


def cast_rays(objects: list[SceneObject], frame: int, origin: np.ndarray,
              dirs: np.ndarray, with_ground: bool = True
              ) -> tuple[np.ndarray, np.ndarray]:
    """Nearest (depth, id) per ray; id: object index, -1 ground, -2 sky."""
    n = dirs.shape[0]
    best_t = np.full(n, _INF)
    best_id = np.full(n, SKY_ID, dtype=np.int32)
    if with_ground:
        tg = _ground_hits(origin, dirs)
        closer = tg < best_t
        best_t[closer] = tg[closer]
        best_id[closer] = GROUND_ID
    for i, obj in enumerate(objects):
        t = intersect(obj, frame, origin, dirs)
        closer = t < best_t
        best_t[closer] = t[closer]
        best_id[closer] = i
    return best_t, best_id


def render_frame(objects: list[SceneObject], camera: Camera, frame: int
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One frame -> (rgb u8 (H,W,3), depth f32 (H,W), id i32 (H,W)).

    Depth is camera-space z; sky pixels carry depth 0 (excluded downstream
    by the valid-depth floor).
    """
    H, W = camera.height, camera.width
    origin = np.asarray(camera.eye, dtype=np.float64)
    dirs = camera.pixel_rays()
    t, ids = cast_rays(objects, frame, origin, dirs)

    color = np.empty((H * W, 3), dtype=np.float64)
    color[:] = SKY_COLOR
    ground = ids == GROUND_ID
    if ground.any():
        hit = origin + t[ground, None] * dirs[ground]
        parity = (np.floor(hit[:, 0] / CHECKER_CELL) + np.floor(hit[:, 2] / CHECKER_CELL)) % 2
        color[ground] = np.where(parity[:, None] == 0, GROUND_COLORS[0], GROUND_COLORS[1])
    for i, obj in enumerate(objects):
        color[ids == i] = np.asarray(obj.color)

    depth = np.where(np.isfinite(t), t, 0.0).astype(np.float32)
    rgb = np.clip(np.round(color * 255.0), 0, 255).astype(np.uint8)
    return rgb.reshape(H, W, 3), depth.reshape(H, W), ids.reshape(H, W).astype(np.int32)
