"""Implementations behind the CLI verbs."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Optional

import numpy as np

from .. import ndgrad as ng
from ..backbone import load_checkpoint
from ..backbone.model import denoise_loss
from ..errors import ValidationError
from ..probe import ProbeSpec, default_block, extract_features, pca_map, render_pca_image
from ..readouts import save_readout
from ..synthworld import (ACTIONS, CAMERA_MOVES, SceneSpec, dataset_index,
                          generate, read_dataset, spec_hash, write_dataset)
from .config import ExperimentConfig, load_config, write_resolved
from .report import (ResultRow, append_rows, build_report, correlation_rows,
                     read_rows, report_csv, report_svg)
from .tasks import make_adapter
from .train import train_backbone

__all__ = ["cmd_gen_data", "cmd_train_backbone", "cmd_train_readout",
           "cmd_eval", "cmd_sweep", "cmd_report", "cmd_viz_pca",
           "run_readout_training", "resolve_probe_spec"]


def _gen_params(cfg: ExperimentConfig, seed: int) -> dict:
    return {
        "base_seed": seed,
        "count": cfg["data.count"],
        "actions": ",".join(cfg.list_of("data.actions")),
        "cameras": ",".join(cfg.list_of("data.cameras")),
        "objects_min": cfg["data.objects_min"],
        "objects_max": cfg["data.objects_max"],
        "frames": cfg["data.frames"],
        "height": cfg["data.height"],
        "width": cfg["data.width"],
        "tracks": cfg["data.tracks"],
    }


def _iter_samples(params: dict):
    actions = params["actions"].split(",")
    cameras = params["cameras"].split(",")
    for a in actions:
        if a not in ACTIONS:
            raise ValidationError(f"unknown action {a!r}")
    for c in cameras:
        if c not in CAMERA_MOVES:
            raise ValidationError(f"unknown camera move {c!r}")
    base = int(params["base_seed"])
    rng = np.random.default_rng(np.random.SeedSequence([base, 0xDA7A]))
    for i in range(int(params["count"])):
        spec = SceneSpec(
            seed=base + i,
            n_objects=int(rng.integers(params["objects_min"],
                                       params["objects_max"] + 1)),
            action=actions[int(rng.integers(0, len(actions)))],
            camera=cameras[int(rng.integers(0, len(cameras)))],
            frames=int(params["frames"]), height=int(params["height"]),
            width=int(params["width"]), n_tracks=int(params["tracks"]))
        yield generate(spec)


def cmd_gen_data(cfg: ExperimentConfig, out_dir: str, seed: Optional[int] = None) -> str:
    if cfg["data.count"] <= 0:
        raise ValidationError("data.count must be positive")
    seed = cfg["seed"] if seed is None else seed
    params = _gen_params(cfg, seed)
    h = write_dataset(_iter_samples(params), out_dir, params)
    write_resolved(cfg, os.path.join(out_dir, "resolved_config.txt"))
    print(f"dataset {out_dir}: {params['count']} samples, spec_hash {h[:12]}")
    return h


def cmd_train_backbone(cfg: ExperimentConfig, mode: str, data_dir: str,
                       ckpt_out: str, ckpt_every: int = 0,
                       resume: Optional[str] = None, quiet: bool = False) -> dict:
    if mode not in ("video", "image"):
        raise ValidationError(f"mode must be video or image, got {mode!r}")
    os.makedirs(os.path.dirname(os.path.abspath(ckpt_out)), exist_ok=True)
    log_path = os.path.splitext(ckpt_out)[0] + "_train_log.csv"
    summary = train_backbone(cfg, mode, data_dir, ckpt_out,
                             ckpt_every=ckpt_every, resume=resume,
                             log_path=log_path, quiet=quiet)
    write_resolved(cfg, os.path.splitext(ckpt_out)[0] + "_resolved_config.txt")
    print(f"trained {mode} backbone: {summary['parameters']} parameters, "
          f"loss {summary['first_loss']:.4f} -> {summary['last_loss']:.4f} "
          f"({summary['seconds']:.0f}s)")
    return summary


def resolve_probe_spec(cfg: ExperimentConfig, model, block: Optional[int] = None,
                       noise: Optional[int] = None, seed: Optional[int] = None
                       ) -> ProbeSpec:
    b = block if block is not None else cfg["probe.block"]
    if b == 0:
        b = default_block(model.config.blocks)
    if not (1 <= b <= model.config.blocks):
        raise ValidationError(f"probe block {b} outside [1, {model.config.blocks}]")
    n = noise if noise is not None else cfg["probe.noise_step"]
    s = seed if seed is not None else cfg["probe.seed"]
    return ProbeSpec(noise_step=n, block=b, seed=s)


def run_readout_training(cfg: ExperimentConfig, task: str, ckpt: str,
                         data_dir: str, eval_dir: str, seeds: list[int],
                         block: Optional[int] = None, noise: Optional[int] = None,
                         out_prefix: Optional[str] = None,
                         results_path: Optional[str] = None,
                         quiet: bool = True) -> list[ResultRow]:
    """Train and evaluate one readout per seed against a frozen backbone."""
    model, _, extra_c = load_checkpoint(ckpt)
    ckpt_step = int(extra_c.get("step", "0"))
    spec = resolve_probe_spec(cfg, model, block=block, noise=noise)
    train_samples = read_dataset(data_dir)
    eval_samples = read_dataset(eval_dir)
    adapter = make_adapter(task, model, train_samples, eval_samples, spec, cfg)

    backbone_params = list(model.params.values())
    steps = cfg["readout.steps"]
    sched = ng.LrSchedule(warmup_steps=cfg["readout.warmup"], total_steps=steps,
                          peak=cfg["readout.peak"], end=cfg["readout.end"])
    rows = []
    for seed in seeds:
        head = adapter.build_head(seed)
        params = head.param_list()
        opt = ng.AdamWState.for_params(params, beta1=cfg["opt.beta1"],
                                       beta2=cfg["opt.beta2"], eps=cfg["opt.eps"],
                                       weight_decay=cfg["opt.weight_decay"])
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
        for step in range(steps):
            idxs = rng.integers(0, adapter.n_train, size=cfg["readout.batch"])
            with ng.Tape():
                loss = adapter.batch_loss(head, idxs)
                ng.gradient_of(loss, params)
            ng.adamw_step(opt, params, [p.grad for p in params],
                          ng.lr_at_step(step, sched))
            head.zero_grads()
            if not quiet and step % 100 == 0:
                print(f"[{task} seed {seed}] step {step} loss {float(loss.data):.4f}",
                      flush=True)
        for p in backbone_params:
            if p.grad is not None:
                raise RuntimeError("frozen-backbone contract violated: backbone "
                                   "parameter received gradient during readout training")
        value = adapter.evaluate(head)
        rows.append(ResultRow(task=task, mode=model.config.mode, ckpt_step=ckpt_step,
                              noise_t=spec.noise_step, block=spec.block, seed=seed,
                              metric=adapter.metric, direction=adapter.direction,
                              value=value))
        if out_prefix:
            save_readout(head, f"{out_prefix}_seed{seed}.ckpt",
                         extra_config={"task": task, "backbone": os.path.basename(ckpt),
                                       "block": spec.block, "noise": spec.noise_step,
                                       "seed": seed})
    if results_path:
        append_rows(results_path, rows)
        write_resolved(cfg, os.path.splitext(results_path)[0] + "_resolved_config.txt")
    return rows


def cmd_train_readout(cfg, task, ckpt, data_dir, eval_dir, seeds, block, noise,
                      out_prefix, results_path, quiet=False) -> list[ResultRow]:
    rows = run_readout_training(cfg, task, ckpt, data_dir, eval_dir, seeds,
                                block=block, noise=noise, out_prefix=out_prefix,
                                results_path=results_path, quiet=quiet)
    for r in rows:
        print(f"{r.task} mode={r.mode} seed={r.seed} block={r.block} "
              f"noise={r.noise_t}: {r.metric}={r.value:.4f}")
    return rows


def cmd_eval(cfg, task, ckpt, readout_path, eval_dir, results_path) -> ResultRow:
    """Re-evaluate a stored readout head; must match in-memory evaluation."""
    from ..readouts import load_readout
    model, _, extra_c = load_checkpoint(ckpt)
    head, extra = load_readout(readout_path)
    block = int(extra.get("block", 0)) or None
    noise = int(extra.get("noise", cfg["probe.noise_step"]))
    spec = resolve_probe_spec(cfg, model, block=block, noise=noise)
    eval_samples = read_dataset(eval_dir)
    adapter = make_adapter(task, model, eval_samples[:1], eval_samples, spec, cfg)
    value = adapter.evaluate(head)
    row = ResultRow(task=task, mode=model.config.mode,
                    ckpt_step=int(extra_c.get("step", "0")),
                    noise_t=spec.noise_step, block=spec.block,
                    seed=int(extra.get("seed", "0")), metric=adapter.metric,
                    direction=adapter.direction, value=value)
    if results_path:
        append_rows(results_path, [row])
    print(f"eval {task}: {adapter.metric}={value:.4f}")
    return row


def _sweep_point(args):
    cfg_lines, task, ckpt, data_dir, eval_dir, seeds, block, noise = args
    cfg = ExperimentConfig()
    for line in cfg_lines.splitlines():
        k, v = line.split("=", 1)
        cfg.set(k, v)
    rows = run_readout_training(cfg, task, ckpt, data_dir, eval_dir, seeds,
                                block=block, noise=noise)
    return [r.line() for r in rows]


def _eval_loss_rows(cfg, ckpt: str, eval_dir: str, seeds: list[int]) -> list[ResultRow]:
    """Monte-Carlo denoising loss of a checkpoint on held-out clips."""
    model, _, extra_c = load_checkpoint(ckpt)
    step = int(extra_c.get("step", "0"))
    from .train import load_latents
    latents = load_latents(model, eval_dir)
    rows = []
    for seed in seeds:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1055]))
        with ng.no_tape():
            losses = [float(denoise_loss(model, latents[i:i + 4], rng).data)
                      for i in range(0, min(len(latents), 16), 4)]
        rows.append(ResultRow(task="generation", mode=model.config.mode,
                              ckpt_step=step, noise_t=0, block=0, seed=seed,
                              metric="train_loss", direction="lower_better",
                              value=float(np.mean(losses))))
    return rows


def cmd_sweep(cfg: ExperimentConfig, axis: str, grid: list, task: str,
              ckpts: list[str], data_dir: str, eval_dir: str, seeds: list[int],
              results_path: str, threads: int = 1) -> list[ResultRow]:
    """One readout per grid point per seed; rows land in one CSV."""
    if not grid and axis != "checkpoint":
        raise ValidationError("sweep grid is empty")
    jobs = []
    cfg_lines = cfg.lines()
    if axis == "noise":
        jobs = [(cfg_lines, task, ckpts[0], data_dir, eval_dir, seeds, None, int(g))
                for g in grid]
    elif axis == "block":
        jobs = [(cfg_lines, task, ckpts[0], data_dir, eval_dir, seeds, int(g), None)
                for g in grid]
    elif axis == "checkpoint":
        if not ckpts:
            raise ValidationError("checkpoint sweep needs checkpoint paths")
        jobs = [(cfg_lines, task, c, data_dir, eval_dir, seeds, None, None)
                for c in ckpts]
    else:
        raise ValidationError(f"unknown sweep axis {axis!r}")

    lines: list[str] = []
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for chunk in pool.map(_sweep_point, jobs):
                lines.extend(chunk)
    else:
        for job in jobs:
            lines.extend(_sweep_point(job))
    rows = [_row_from_line(ln) for ln in lines]
    if axis == "checkpoint":
        for c in ckpts:
            rows.extend(_eval_loss_rows(cfg, c, eval_dir, seeds))
    append_rows(results_path, rows)
    write_resolved(cfg, os.path.splitext(results_path)[0] + "_resolved_config.txt")
    print(f"sweep {axis}: {len(rows)} rows -> {results_path}")
    return rows


def _row_from_line(line: str) -> ResultRow:
    p = line.strip().split(",")
    return ResultRow(p[0], p[1], int(p[2]), int(p[3]), int(p[4]), int(p[5]),
                     p[6], p[7], float(p[8]))


def _read_expected(path: Optional[str]) -> Optional[dict[str, float]]:
    if not path:
        return None
    out = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("task,"):
                continue
            task, val = line.split(",", 1)
            out[task] = float(val)
    return out


def cmd_report(image_csv: str, video_csv: str, out_svg: Optional[str],
               out_csv: Optional[str], expected_csv: Optional[str] = None,
               corr_csv: Optional[str] = None) -> list[dict]:
    image_rows = read_rows(image_csv)
    video_rows = read_rows(video_csv)
    rep = build_report([r for r in image_rows if r.metric != "train_loss"],
                       [r for r in video_rows if r.metric != "train_loss"],
                       expected=_read_expected(expected_csv))
    if out_csv:
        report_csv(rep, out_csv)
    if out_svg:
        report_svg(rep, out_svg)
    for r in rep:
        flag = f"  [{r['flags']}]" if r["flags"] else ""
        print(f"{r['task']:<10} {100 * r['rel_change']:+7.2f}%  "
              f"(image {r['x_image']:.4g}, video {r['x_video']:.4g}){flag}")
    if corr_csv:
        corr = correlation_rows(image_rows + video_rows)
        with open(corr_csv, "w", encoding="utf-8") as f:
            f.write("mode,task,metric,n_checkpoints,pearson_loss,spearman_loss\n")
            for c in corr:
                f.write(f"{c['mode']},{c['task']},{c['metric']},{c['n_checkpoints']},"
                        f"{c['pearson_loss']:.6f},{c['spearman_loss']:.6f}\n")
        print(f"correlations -> {corr_csv} ({len(corr)} rows)")
    return rep


def cmd_viz_pca(cfg: ExperimentConfig, ckpt: str, data_dir: str, sample_idx: int,
                out_stem: str, block: Optional[int] = None,
                noise: Optional[int] = None) -> list[str]:
    from ..synthworld import read_sample
    model, _, _ = load_checkpoint(ckpt)
    spec = resolve_probe_spec(cfg, model, block=block, noise=noise)
    sample = read_sample(data_dir, sample_idx)
    feats = extract_features(model, sample.video, spec, checkpoint_id=os.path.basename(ckpt))
    pmap = pca_map(feats)
    files = render_pca_image(pmap, model.config.latent_h, model.config.latent_w,
                             out_stem)
    print(f"wrote {len(files)} pca rasters: {files[0]} ...")
    return files
