"""Backbone training loop: deterministic, resumable, checkpoint-emitting."""

from __future__ import annotations

import os
import time
from typing import Optional

import numpy as np

from .. import ndgrad as ng
from ..backbone import BackboneConfig, BackboneModel, save_checkpoint
from ..backbone.model import denoise_loss
from ..errors import ValidationError
from ..synthworld import read_dataset
from .config import ExperimentConfig

__all__ = ["backbone_config_from", "load_latents", "train_backbone",
           "rng_state_config", "restore_rng"]


def backbone_config_from(cfg: ExperimentConfig, frames: int, height: int,
                         width: int, mode: str) -> BackboneConfig:
    return BackboneConfig(
        frames=frames, height=height, width=width, mode=mode,
        spatial_patch=cfg["model.spatial_patch"],
        temporal_patch=cfg["model.temporal_patch"],
        latent_channels=cfg["model.latent_channels"],
        embed_dim=cfg["model.embed_dim"], blocks=cfg["model.blocks"],
        heads=cfg["model.heads"], mlp_ratio=cfg["model.mlp_ratio"],
        window_tile=cfg["model.window_tile"], time_freqs=cfg["model.time_freqs"],
        t_steps=cfg["model.t_steps"], latent_gain=cfg["model.latent_gain"])


def load_latents(model: BackboneModel, data_dir: str) -> np.ndarray:
    """Tokenize every clip once; the tokenizer is fixed so the cache is exact."""
    samples = read_dataset(data_dir)
    if not samples:
        raise ValidationError(f"dataset {data_dir} is empty")
    videos = np.stack([s.video for s in samples]).astype(np.float32) / np.float32(255.0)
    return model.tokenize_batch(videos)


def rng_state_config(rng: np.random.Generator) -> dict:
    st = rng.bit_generator.state
    return {"rng.state": st["state"]["state"], "rng.inc": st["state"]["inc"],
            "rng.has_uint32": st["has_uint32"], "rng.uinteger": st["uinteger"]}


def restore_rng(extra: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": int(extra["rng.state"]), "inc": int(extra["rng.inc"])},
        "has_uint32": int(extra["rng.has_uint32"]),
        "uinteger": int(extra["rng.uinteger"]),
    }
    return rng


def _opt_tensors(state: ng.AdamWState, names: list[str]) -> dict[str, np.ndarray]:
    out = {}
    for name, m, v in zip(names, state.m, state.v):
        out[f"opt.m.{name}"] = m
        out[f"opt.v.{name}"] = v
    return out


def train_backbone(cfg: ExperimentConfig, mode: str, data_dir: str, ckpt_out: str,
                   ckpt_every: int = 0, resume: Optional[str] = None,
                   log_path: Optional[str] = None, quiet: bool = False) -> dict:
    """Train one backbone; returns a small summary dict.

    The checkpoint stores optimizer moments and the generator state, so a
    resumed run continues the loss log bitwise.
    """
    steps = cfg["train.steps"]
    batch = cfg["train.batch"]
    sched = ng.LrSchedule(warmup_steps=cfg["opt.warmup"], total_steps=steps,
                          peak=cfg["opt.peak"], end=cfg["opt.end"])

    extra_t: dict = {}
    if resume:
        from ..backbone import load_checkpoint
        model, extra_t, extra_c = load_checkpoint(resume, mode=mode)
        start_step = int(extra_c.get("step", "0"))
        rng = restore_rng(extra_c)
    else:
        from ..synthworld import dataset_index
        idx = dataset_index(data_dir)
        frames = int(idx["param.frames"])
        height, width = int(idx["param.height"]), int(idx["param.width"])
        bcfg = backbone_config_from(cfg, frames, height, width, mode)
        model = BackboneModel(bcfg, seed=cfg["seed"])
        start_step = 0
        rng = np.random.default_rng(np.random.SeedSequence([cfg["seed"], 0x7AA1]))

    latents = load_latents(model, data_dir)
    names = list(model.trainable())
    params = [model.params[n] for n in names]
    opt = ng.AdamWState.for_params(params, beta1=cfg["opt.beta1"],
                                   beta2=cfg["opt.beta2"], eps=cfg["opt.eps"],
                                   weight_decay=cfg["opt.weight_decay"])
    if resume:
        for i, n in enumerate(names):
            opt.m[i][:] = extra_t[f"opt.m.{n}"]
            opt.v[i][:] = extra_t[f"opt.v.{n}"]
        opt.step = start_step

    log_lines = ["step,lr,loss\n"]
    t_start = time.time()
    first_losses, last_losses = [], []
    for step in range(start_step, steps):
        idxs = rng.integers(0, latents.shape[0], size=batch)
        lr = ng.lr_at_step(step, sched)
        with ng.Tape():
            loss = denoise_loss(model, latents[idxs], rng)
            ng.gradient_of(loss, params)
        ng.adamw_step(opt, params, [p.grad for p in params], lr)
        for p in params:
            p.zero_grad()
        lv = float(loss.data)
        if step < 10:
            first_losses.append(lv)
        if step >= steps - 10:
            last_losses.append(lv)
        if step % cfg["train.log_every"] == 0 or step == steps - 1:
            log_lines.append(f"{step},{lr:.8e},{lv:.8e}\n")
            if not quiet and (step % (cfg["train.log_every"] * 20) == 0):
                print(f"[{mode}] step {step} lr {lr:.2e} loss {lv:.4f}", flush=True)
        if ckpt_every and (step + 1) % ckpt_every == 0 and (step + 1) < steps:
            _save(model, opt, names, rng, step + 1, _step_path(ckpt_out, step + 1))

    _save(model, opt, names, rng, steps, ckpt_out)
    if log_path:
        with open(log_path, "w", encoding="utf-8") as f:
            f.writelines(log_lines)
    return {
        "mode": mode, "steps": steps, "parameters": model.parameter_count(),
        "first_loss": float(np.mean(first_losses)) if first_losses else float("nan"),
        "last_loss": float(np.mean(last_losses)) if last_losses else float("nan"),
        "seconds": time.time() - t_start, "ckpt": ckpt_out,
    }


def _step_path(ckpt_out: str, step: int) -> str:
    stem, ext = os.path.splitext(ckpt_out)
    return f"{stem}_step{step}{ext or '.ckpt'}"


def _save(model, opt, names, rng, step, path):
    save_checkpoint(model, path,
                    extra_tensors=_opt_tensors(opt, names),
                    extra_config={"step": step, **rng_state_config(rng)})
