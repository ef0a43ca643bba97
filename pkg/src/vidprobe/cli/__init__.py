"""Command-line interface.

Verbs: gen-data, train-backbone, train-readout, eval, sweep, report,
viz-pca. Exit codes: 0 success, 1 validation error, 2 I/O or format error.
"""

from __future__ import annotations

import argparse
import sys

from ..errors import FormatError, ValidationError
from .config import load_config


def _int_list(s: str) -> list[int]:
    return [int(x) for x in s.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="key=value experiment config")
    common.add_argument("--seed", type=int, default=None, help="override config seed")
    common.add_argument("--threads", type=int, default=1,
                        help="worker processes for sweeps")

    p = argparse.ArgumentParser(prog="vidprobe", parents=[common],
                                description="video- vs image-mode diffusion "
                                            "representation probing, desk scale")
    sub = p.add_subparsers(dest="verb", required=True)

    def add_parser(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    g = add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=None)

    t = add_parser("train-backbone", help="train a denoising backbone")
    t.add_argument("--mode", required=True, choices=("video", "image"))
    t.add_argument("--data", required=True)
    t.add_argument("--ckpt-out", required=True)
    t.add_argument("--ckpt-every", type=int, default=0)
    t.add_argument("--resume", default=None)
    t.add_argument("--steps", type=int, default=None)
    t.add_argument("--quiet", action="store_true")

    r = add_parser("train-readout", help="train a frozen-backbone readout")
    r.add_argument("--task", required=True)
    r.add_argument("--ckpt", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--eval-data", required=True)
    r.add_argument("--block", type=int, default=None)
    r.add_argument("--noise", type=int, default=None)
    r.add_argument("--seeds", type=_int_list, default=[0])
    r.add_argument("--out-prefix", default=None)
    r.add_argument("--results", default=None)
    r.add_argument("--steps", type=int, default=None)

    e = add_parser("eval", help="re-evaluate a stored readout")
    e.add_argument("--task", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--readout", required=True)
    e.add_argument("--eval-data", required=True)
    e.add_argument("--results", default=None)

    s = add_parser("sweep", help="readouts across noise/block/checkpoint grids")
    s.add_argument("--axis", required=True, choices=("noise", "block", "checkpoint"))
    s.add_argument("--grid", default="", help="comma-separated grid values")
    s.add_argument("--task", required=True)
    s.add_argument("--ckpt", action="append", default=[],
                   help="backbone checkpoint (repeat for checkpoint axis)")
    s.add_argument("--data", required=True)
    s.add_argument("--eval-data", required=True)
    s.add_argument("--seeds", type=_int_list, default=[0])
    s.add_argument("--results", required=True)

    c = add_parser("report", help="relative-change table, chart, correlations")
    c.add_argument("--image-csv", required=True)
    c.add_argument("--video-csv", required=True)
    c.add_argument("--out-svg", default=None)
    c.add_argument("--out-csv", default=None)
    c.add_argument("--expected-csv", default=None,
                   help="task,value headline fractions to cross-check")
    c.add_argument("--corr-csv", default=None)

    v = add_parser("viz-pca", help="render top-component maps as PGM files")
    v.add_argument("--ckpt", required=True)
    v.add_argument("--data", required=True)
    v.add_argument("--sample", type=int, default=0)
    v.add_argument("--block", type=int, default=None)
    v.add_argument("--noise", type=int, default=None)
    v.add_argument("--out", required=True)

    return p


def _dispatch(args) -> int:
    from . import commands as C

    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "count", None) is not None:
        overrides["data.count"] = args.count
    if getattr(args, "steps", None) is not None:
        key = "train.steps" if args.verb == "train-backbone" else "readout.steps"
        overrides[key] = args.steps
    cfg = load_config(args.config, overrides)

    if args.verb == "gen-data":
        C.cmd_gen_data(cfg, args.out)
    elif args.verb == "train-backbone":
        C.cmd_train_backbone(cfg, args.mode, args.data, args.ckpt_out,
                             ckpt_every=args.ckpt_every, resume=args.resume,
                             quiet=args.quiet)
    elif args.verb == "train-readout":
        C.cmd_train_readout(cfg, args.task, args.ckpt, args.data, args.eval_data,
                            args.seeds, args.block, args.noise,
                            args.out_prefix, args.results)
    elif args.verb == "eval":
        C.cmd_eval(cfg, args.task, args.ckpt, args.readout, args.eval_data,
                   args.results)
    elif args.verb == "sweep":
        grid = [g for g in args.grid.split(",") if g.strip()]
        C.cmd_sweep(cfg, args.axis, grid, args.task, args.ckpt, args.data,
                    args.eval_data, args.seeds, args.results,
                    threads=args.threads)
    elif args.verb == "report":
        C.cmd_report(args.image_csv, args.video_csv, args.out_svg, args.out_csv,
                     expected_csv=args.expected_csv, corr_csv=args.corr_csv)
    elif args.verb == "viz-pca":
        C.cmd_viz_pca(cfg, args.ckpt, args.data, args.sample, args.out,
                      block=args.block, noise=args.noise)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
