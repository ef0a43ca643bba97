"""Fixed 3D patchify tokenizer.

Frame 0 is encoded on its own; every later frame belongs to a temporal
group of ``temporal_patch`` frames, so latent frame k >= 1 depends only on
its own group. The projections are seeded at model creation and never
trained; they ride along in checkpoints so latents are reproducible.
"""

from __future__ import annotations

import numpy as np

from .config import BackboneConfig

__all__ = ["init_tokenizer_params", "tokenize", "tokenize_batch"]


def init_tokenizer_params(config: BackboneConfig, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x70CB]))
    ps, tp, c = config.spatial_patch, config.temporal_patch, config.latent_channels
    d_first = ps * ps * 3
    d_group = tp * ps * ps * 3
    gain = config.latent_gain
    return {
        "tok.first.w": (rng.standard_normal((d_first, c)) * gain / np.sqrt(d_first)).astype(np.float32),
        "tok.first.b": (rng.standard_normal(c) * 0.01).astype(np.float32),
        "tok.group.w": (rng.standard_normal((d_group, c)) * gain / np.sqrt(d_group)).astype(np.float32),
        "tok.group.b": (rng.standard_normal(c) * 0.01).astype(np.float32),
    }


def _spatial_patches(frames: np.ndarray, ps: int) -> np.ndarray:
    """(..., H, W, 3) -> (..., H/ps, W/ps, ps*ps*3)."""
    *lead, H, W, _ = frames.shape
    x = frames.reshape(*lead, H // ps, ps, W // ps, ps, 3)
    x = np.moveaxis(x, -4, -3)  # (..., h, w, ps, ps, 3)
    return x.reshape(*lead, H // ps, W // ps, ps * ps * 3)


def tokenize_batch(video: np.ndarray, params: dict, config: BackboneConfig) -> np.ndarray:
    """(B, frames, H, W, 3) in [0, 1] -> latents (B, 1+m, h, w, c)."""
    if video.shape[1:] != (config.frames, config.height, config.width, 3):
        raise ValueError(f"video shape {video.shape[1:]} != "
                         f"{(config.frames, config.height, config.width, 3)}")
    x = video.astype(np.float32) - np.float32(0.5)
    B = x.shape[0]
    ps, tp, m = config.spatial_patch, config.temporal_patch, config.temporal_groups
    h, w = config.latent_h, config.latent_w

    first = _spatial_patches(x[:, 0], ps) @ params["tok.first.w"] + params["tok.first.b"]

    groups = x[:, 1:].reshape(B, m, tp, config.height, config.width, 3)
    gp = _spatial_patches(groups, ps)                     # (B, m, tp, h, w, d)
    gp = np.moveaxis(gp, 2, -2)                           # (B, m, h, w, tp, d)
    gp = gp.reshape(B, m, h, w, tp * ps * ps * 3)
    rest = gp @ params["tok.group.w"] + params["tok.group.b"]

    return np.concatenate([first[:, None], rest], axis=1).astype(np.float32)


def tokenize(video: np.ndarray, params: dict, config: BackboneConfig) -> np.ndarray:
    """Single video (frames, H, W, 3) -> latents (1+m, h, w, c)."""
    return tokenize_batch(video[None], params, config)[0]
