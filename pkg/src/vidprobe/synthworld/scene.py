"""Scene geometry: pinhole camera, rigid objects, rotation helpers.

World frame: y up, ground plane y = 0. Camera frame: x right, y down,
z forward, so image v grows downward. Intrinsics are fixed: focal = image
height, principal point at the grid center.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

__all__ = ["Camera", "SceneObject", "SPHERE", "BOX", "CONE", "KINDS",
           "yaw_matrix", "look_at_rotation", "NEAR_PLANE"]

SPHERE, BOX, CONE = "sphere", "box", "cone"
KINDS = (SPHERE, BOX, CONE)

NEAR_PLANE = 0.05


def yaw_matrix(theta: float) -> np.ndarray:
    """Rotation about the world y axis."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]], dtype=np.float64)


def look_at_rotation(eye: np.ndarray, target: np.ndarray) -> np.ndarray:
    """World->camera rotation rows (x right, y down, z forward).

    The y-down image convention makes this matrix a reflection (det -1);
    relative poses between two cameras are proper rotations regardless.
    """
    fwd = target - eye
    fwd = fwd / np.linalg.norm(fwd)
    up = np.array([0.0, 1.0, 0.0])
    right = np.cross(up, fwd)
    right = right / np.linalg.norm(right)
    down = np.cross(right, fwd)
    return np.stack([right, down, fwd])


@dataclass(frozen=True)
class Camera:
    eye: Tuple[float, float, float]
    target: Tuple[float, float, float]
    width: int
    height: int

    @property
    def focal(self) -> float:
        return float(self.height)

    @property
    def cx(self) -> float:
        return (self.width - 1) / 2.0

    @property
    def cy(self) -> float:
        return (self.height - 1) / 2.0

    @property
    def rotation(self) -> np.ndarray:
        return look_at_rotation(np.asarray(self.eye, float), np.asarray(self.target, float))

    def extrinsic(self) -> np.ndarray:
        """3x4 world->camera transform [R | t], x_cam = R x_world + t."""
        R = self.rotation
        t = -R @ np.asarray(self.eye, dtype=np.float64)
        return np.hstack([R, t[:, None]])

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        E = self.extrinsic()
        return np.atleast_2d(points) @ E[:, :3].T + E[:, 3]

    def project_many(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(N, 3) world points -> pixel (N, 2) and camera-space depth (N,).

        No validity filtering; callers mask on depth > NEAR_PLANE.
        """
        cam = self.to_camera(points)
        z = cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.cx + self.focal * cam[:, 0] / z
            v = self.cy + self.focal * cam[:, 1] / z
        return np.stack([u, v], axis=1), z

    def project(self, point) -> tuple[float, float, float]:
        """Single point -> (u, v, depth); raises for points behind the near plane."""
        uv, z = self.project_many(np.asarray(point, dtype=np.float64)[None])
        if z[0] <= NEAR_PLANE:
            raise ValueError(f"point at camera depth {z[0]:.4f} is behind the near plane")
        return float(uv[0, 0]), float(uv[0, 1]), float(z[0])

    def pixel_rays(self) -> np.ndarray:
        """World-frame ray directions for every pixel center, depth-parameterized.

        The returned directions have unit camera-z component, so the ray
        parameter equals camera-space depth. Shape (H*W, 3).
        """
        us = np.arange(self.width, dtype=np.float64)
        vs = np.arange(self.height, dtype=np.float64)
        uu, vv = np.meshgrid(us, vs)
        d_cam = np.stack([(uu - self.cx) / self.focal,
                          (vv - self.cy) / self.focal,
                          np.ones_like(uu)], axis=-1).reshape(-1, 3)
        return d_cam @ self.rotation


@dataclass
class SceneObject:
    """Rigid primitive with per-frame position and yaw trajectories."""

    kind: str
    size: float                  # sphere radius | box half-edge | cone base radius
    color: Tuple[float, float, float]
    positions: np.ndarray        # (frames, 3) world
    yaws: np.ndarray             # (frames,)
    aspect: float = 1.0          # box y-half/size; cone height/size

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown object kind {self.kind!r}")

    @property
    def height_extent(self) -> float:
        if self.kind == SPHERE:
            return 2.0 * self.size
        if self.kind == BOX:
            return 2.0 * self.size * self.aspect
        return self.size * self.aspect

    def to_local(self, frame: int, points: np.ndarray) -> np.ndarray:
        R = yaw_matrix(-float(self.yaws[frame]))
        return (np.atleast_2d(points) - self.positions[frame]) @ R.T

    def to_world(self, frame: int, local: np.ndarray) -> np.ndarray:
        R = yaw_matrix(float(self.yaws[frame]))
        return np.atleast_2d(local) @ R.T + self.positions[frame]
