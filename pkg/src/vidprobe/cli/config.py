"""Experiment configuration: flat utf-8 key=value files with a fixed schema.

Unknown keys are rejected. Every command writes the resolved configuration
(defaults merged with overrides) next to its outputs.
"""

from __future__ import annotations

import os
from typing import Optional

from ..errors import ValidationError

__all__ = ["SCHEMA", "ExperimentConfig", "load_config", "write_resolved"]

# key -> (type, default). Optimizer defaults follow the readout recipe:
# AdamW(0.9, 0.999, eps 1e-8, weight decay 1e-4), warmup 1000 steps from 0
# to 3e-4, cosine decay to 1e-7.
SCHEMA: dict[str, tuple] = {
    "seed": (int, 0),
    # dataset generation
    "data.count": (int, 96),
    "data.actions": (str, "translate_lr,translate_rl"),
    "data.cameras": (str, "static,translate"),
    "data.objects_min": (int, 3),
    "data.objects_max": (int, 5),
    "data.frames": (int, 9),
    "data.height": (int, 64),
    "data.width": (int, 64),
    "data.tracks": (int, 64),
    # backbone architecture (frames/height/width come from the dataset)
    "model.spatial_patch": (int, 8),
    "model.temporal_patch": (int, 4),
    "model.latent_channels": (int, 16),
    "model.embed_dim": (int, 128),
    "model.blocks": (int, 12),
    "model.heads": (int, 4),
    "model.mlp_ratio": (int, 4),
    "model.window_tile": (int, 4),
    "model.time_freqs": (int, 8),
    "model.t_steps": (int, 1000),
    "model.latent_gain": (float, 4.0),
    # optimizer (backbone training)
    "opt.beta1": (float, 0.9),
    "opt.beta2": (float, 0.999),
    "opt.eps": (float, 1e-8),
    "opt.weight_decay": (float, 1e-4),
    "opt.warmup": (int, 1000),
    "opt.peak": (float, 3e-4),
    "opt.end": (float, 1e-7),
    "train.steps": (int, 2000),
    "train.batch": (int, 4),
    "train.log_every": (int, 10),
    # readout training (same optimizer family, its own schedule lengths)
    "readout.steps": (int, 400),
    "readout.batch": (int, 4),
    "readout.warmup": (int, 1000),
    "readout.peak": (float, 3e-4),
    "readout.end": (float, 1e-7),
    "readout.mlp_hidden": (int, 512),
    "readout.heads": (int, 4),
    "readout.track_layers": (int, 2),
    "readout.state_dim": (int, 128),
    "readout.fourier_freqs": (int, 6),
    # probing
    "probe.block": (int, 0),        # 0 resolves to round(2L/3)
    "probe.noise_step": (int, 200),
    "probe.seed": (int, 0),
    "aj.thresholds": (str, "1,2,4,8,16"),
}


class ExperimentConfig:
    def __init__(self, values: Optional[dict] = None):
        self.values = {k: d for k, (_, d) in SCHEMA.items()}
        if values:
            for k, v in values.items():
                self.set(k, v)

    def set(self, key: str, raw) -> None:
        if key not in SCHEMA:
            raise ValidationError(f"unknown config key {key!r}")
        typ, _ = SCHEMA[key]
        try:
            self.values[key] = typ(raw)
        except ValueError as exc:
            raise ValidationError(f"config key {key}: {exc}") from None

    def __getitem__(self, key: str):
        if key not in SCHEMA:
            raise ValidationError(f"unknown config key {key!r}")
        return self.values[key]

    def list_of(self, key: str) -> list[str]:
        return [s.strip() for s in str(self[key]).split(",") if s.strip()]

    def float_list(self, key: str) -> list[float]:
        return [float(s) for s in self.list_of(key)]

    def lines(self) -> str:
        return "".join(f"{k}={self.values[k]}\n" for k in sorted(self.values))


def load_config(path: Optional[str], overrides: Optional[dict] = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is not None:
        if not os.path.exists(path):
            raise ValidationError(f"config file {path} does not exist")
        with open(path, encoding="utf-8") as f:
            for ln, line in enumerate(f, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ValidationError(f"{path}:{ln}: expected key=value, got {line!r}")
                k, v = line.split("=", 1)
                cfg.set(k.strip(), v.strip())
    for k, v in (overrides or {}).items():
        if v is not None:
            cfg.set(k, v)
    return cfg


def write_resolved(cfg: ExperimentConfig, out_path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as f:
        f.write(cfg.lines())
