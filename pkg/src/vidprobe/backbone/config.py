"""Backbone hyperparameters and the window layout they imply."""

from __future__ import annotations

from dataclasses import dataclass, fields

from ..errors import ValidationError

__all__ = ["BackboneConfig", "SPATIAL", "SPATIO_TEMPORAL", "IDENTITY"]

SPATIAL = "spatial"
SPATIO_TEMPORAL = "spatio-temporal"
IDENTITY = "identity"

MODES = ("video", "image")


@dataclass(frozen=True)
class BackboneConfig:
    frames: int = 9
    height: int = 64
    width: int = 64
    spatial_patch: int = 8
    temporal_patch: int = 4
    latent_channels: int = 16
    embed_dim: int = 128
    blocks: int = 12
    heads: int = 4
    mlp_ratio: int = 4
    window_tile: int = 4
    mode: str = "video"
    # legacy variant: odd blocks use per-token identity masks instead of
    # being swapped for spatial windows (only meaningful with mode="image")
    image_identity_windows: bool = False
    time_freqs: int = 8
    t_steps: int = 1000
    latent_gain: float = 4.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.frames < 1 + self.temporal_patch or (self.frames - 1) % self.temporal_patch:
            raise ValidationError(
                f"frames must be 1 + {self.temporal_patch}*m with m >= 1, got {self.frames}")
        if self.height % self.spatial_patch or self.width % self.spatial_patch:
            raise ValidationError("height/width must be divisible by spatial_patch")
        if self.blocks < 2 or self.blocks % 2:
            raise ValidationError(f"blocks must be even and >= 2, got {self.blocks}")
        if self.embed_dim % self.heads:
            raise ValidationError("embed_dim must be divisible by heads")
        lh, lw = self.height // self.spatial_patch, self.width // self.spatial_patch
        if lh % self.window_tile or lw % self.window_tile:
            raise ValidationError("latent grid must be divisible by window_tile")

    @property
    def temporal_groups(self) -> int:
        return (self.frames - 1) // self.temporal_patch

    @property
    def latent_frames(self) -> int:
        return 1 + self.temporal_groups

    @property
    def latent_h(self) -> int:
        return self.height // self.spatial_patch

    @property
    def latent_w(self) -> int:
        return self.width // self.spatial_patch

    @property
    def tokens_per_frame(self) -> int:
        return self.latent_h * self.latent_w

    @property
    def grid_tokens(self) -> int:
        return self.latent_frames * self.tokens_per_frame

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    def window_kind(self, block: int) -> str:
        """Window kind of 1-indexed block: odd spatial, even spatio-temporal.

        Image mode swaps spatio-temporal blocks for spatial ones of the same
        parameter shapes (or identity masks under the legacy flag).
        """
        if not (1 <= block <= self.blocks):
            raise ValidationError(f"block {block} outside [1, {self.blocks}]")
        if block % 2 == 1:
            return SPATIAL
        if self.mode == "video":
            return SPATIO_TEMPORAL
        return IDENTITY if self.image_identity_windows else SPATIAL

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, raw: dict) -> "BackboneConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name not in raw:
                continue
            v = raw[f.name]
            if f.type in ("int", int):
                v = int(v)
            elif f.type in ("float", float):
                v = float(v)
            elif f.type in ("bool", bool):
                v = v in (True, "True", "true", "1", 1)
            kwargs[f.name] = v
        unknown = set(raw) - {f.name for f in fields(cls)}
        if unknown:
            raise ValidationError(f"unknown backbone config keys: {sorted(unknown)}")
        return cls(**kwargs)
