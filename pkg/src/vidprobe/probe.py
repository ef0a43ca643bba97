"""Frozen-feature probing: noise injection, single-pass capture, PCA views.

Features come from one forward pass of the denoiser over noised latents;
no sampling loop is involved. Extraction is a pure function of
(checkpoint, video, ProbeSpec).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import ndgrad as ng
from .backbone.model import BackboneModel
from .backbone.schedule import forward_noise
from .errors import FormatError, ValidationError

__all__ = ["ProbeSpec", "FeatureStack", "default_block", "default_noise_step",
           "extract_features", "interpolate_temporal", "pca_map",
           "render_pca_image", "read_pgm", "motion_energy_split"]


def default_block(n_blocks: int) -> int:
    """Two thirds of the depth, the sweet spot the block sweep recovers."""
    return max(1, round(2 * n_blocks / 3))


def default_noise_step(t_steps: int) -> int:
    return t_steps // 5


@dataclass(frozen=True)
class ProbeSpec:
    """Where to probe: discrete noise step, block index, and noise seed."""

    noise_step: int = 200
    block: int = 8
    seed: int = 0

    @classmethod
    def defaults_for(cls, model: BackboneModel, seed: int = 0) -> "ProbeSpec":
        return cls(noise_step=default_noise_step(model.schedule.t_steps),
                   block=default_block(model.config.blocks), seed=seed)


@dataclass
class FeatureStack:
    """Captured activations, (latent frames, tokens, channels), plus origin."""

    activations: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def latent_frames(self) -> int:
        return self.activations.shape[0]


def extract_features(model: BackboneModel, video: np.ndarray, spec: ProbeSpec,
                     checkpoint_id: str = "") -> FeatureStack:
    """Tokenize, noise at the spec's step, run one capture forward pass."""
    cfg = model.config
    if not (1 <= spec.block <= cfg.blocks):
        raise ValidationError(f"probe block {spec.block} outside [1, {cfg.blocks}]")
    if not (0 <= spec.noise_step <= model.schedule.t_steps):
        raise ValidationError(
            f"noise step {spec.noise_step} outside [0, {model.schedule.t_steps}]")
    video = np.asarray(video)
    if video.dtype == np.uint8:
        video = video.astype(np.float32) / np.float32(255.0)
    z0 = model.tokenize(video)
    t = model.schedule.t_of_step(spec.noise_step)
    eps = np.random.default_rng(
        np.random.SeedSequence([spec.seed, 0x9015E])).standard_normal(z0.shape)
    z_t = forward_noise(z0, t, eps.astype(np.float32), model.schedule)
    with ng.no_tape():
        _, feats = model.forward(z_t[None], np.array([t]), capture=spec.block)
    return FeatureStack(activations=feats.data[0],
                        provenance={"checkpoint": checkpoint_id,
                                    "noise_step": spec.noise_step,
                                    "block": spec.block, "seed": spec.seed})


def interpolate_temporal(features: FeatureStack, n_frames: int) -> np.ndarray:
    """Endpoint-aligned linear resampling of the latent-frame axis.

    Returns (n_frames, tokens, channels); identity when counts match.
    """
    acts = features.activations
    F = acts.shape[0]
    if n_frames < F:
        raise ValidationError(f"cannot interpolate {F} latent frames down to {n_frames}")
    if n_frames == F:
        return acts.copy()
    if F == 1:
        return np.repeat(acts, n_frames, axis=0)
    pos = np.arange(n_frames, dtype=np.float64) * (F - 1) / (n_frames - 1)
    lo = np.clip(np.floor(pos).astype(int), 0, F - 2)
    frac = (pos - lo).astype(np.float32)[:, None, None]
    return (acts[lo] * (1.0 - frac) + acts[lo + 1] * frac).astype(acts.dtype)


def pca_map(features: FeatureStack) -> np.ndarray:
    """Projection onto the largest-eigenvalue component of token covariance.

    Tokens of all frames are centered jointly; output (frames, tokens) is
    scaled so max |value| = 1 with the peak entry positive.
    """
    acts = features.activations.astype(np.float64)
    F, n, d = acts.shape
    X = acts.reshape(F * n, d)
    if X.shape[0] < 2:
        raise ValidationError("pca_map needs at least 2 tokens")
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / X.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    if evals[-1] <= 1e-12:
        raise ValidationError("pca_map undefined: zero-variance features")
    proj = Xc @ evecs[:, -1]
    peak = np.argmax(np.abs(proj))
    if proj[peak] < 0:
        proj = -proj
    return (proj / np.abs(proj[peak])).reshape(F, n)


# --------------------------------------------------------------- rasters
# palette: value in [-1, 1] maps linearly to gray 0..255

def _to_gray(m: np.ndarray) -> np.ndarray:
    return np.clip(np.round((m + 1.0) * 127.5), 0, 255).astype(np.uint8)


def write_pgm(path: str, img: np.ndarray) -> None:
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    parts = blob.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary P5 raster")
    try:
        w, h = map(int, parts[1].split())
        maxval = int(parts[2])
    except ValueError as exc:
        raise FormatError(f"{path}: malformed raster header") from exc
    if maxval != 255 or len(parts[3]) < w * h:
        raise FormatError(f"{path}: truncated or unsupported raster")
    return np.frombuffer(parts[3][:w * h], dtype=np.uint8).reshape(h, w).copy()


def render_pca_image(pmap: np.ndarray, h: int, w: int, path: str) -> list[str]:
    """One 8-bit grayscale PGM per frame, suffixed _f{index}."""
    pmap = np.asarray(pmap)
    if pmap.ndim != 2 or pmap.shape[1] != h * w:
        raise ValidationError(f"map shape {pmap.shape} incompatible with {h}x{w} grid")
    stem, ext = os.path.splitext(path)
    if ext.lower() not in (".pgm", ""):
        raise ValidationError("raster output must be .pgm")
    written = []
    for f in range(pmap.shape[0]):
        name = f"{stem}_f{f}.pgm"
        write_pgm(name, _to_gray(pmap[f].reshape(h, w)))
        written.append(name)
    return written


def motion_energy_split(pmap: np.ndarray, video: np.ndarray, latent_h: int,
                        latent_w: int, diff_tol: int = 8) -> tuple[float, float]:
    """Mean |map| over moving vs static tokens, judged from frame differences.

    A latent-grid cell counts as moving when any pixel inside it changes by
    more than ``diff_tol`` (u8 levels) relative to frame 0. The map's frame 0
    is skipped since it is the difference reference.
    """
    video = np.asarray(video)
    diff = (np.abs(video.astype(np.int16) - video[0].astype(np.int16)).max(axis=(0, 3))
            > diff_tol)
    H, W = diff.shape
    cells = diff.reshape(latent_h, H // latent_h, latent_w, W // latent_w).any(axis=(1, 3))
    moving = cells.reshape(-1)
    if moving.all() or not moving.any():
        raise ValidationError("motion mask is degenerate (all or nothing moving)")
    tail = np.abs(pmap[1:]) if pmap.shape[0] > 1 else np.abs(pmap)
    return float(tail[:, moving].mean()), float(tail[:, ~moving].mean())
