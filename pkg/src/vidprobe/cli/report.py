"""Result rows, relative-change tables, SVG bars, and correlation summaries."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import metrics as M
from ..errors import FormatError, ValidationError

__all__ = ["RESULT_HEADER", "ResultRow", "append_rows", "read_rows",
           "build_report", "report_csv", "report_svg", "correlation_rows"]

RESULT_HEADER = "task,mode,ckpt_step,noise_t,block,seed,metric,direction,value"


@dataclass
class ResultRow:
    task: str
    mode: str
    ckpt_step: int
    noise_t: int
    block: int
    seed: int
    metric: str
    direction: str
    value: float

    def line(self) -> str:
        return (f"{self.task},{self.mode},{self.ckpt_step},{self.noise_t},"
                f"{self.block},{self.seed},{self.metric},{self.direction},"
                f"{self.value:.8g}\n")


def append_rows(path: str, rows: list[ResultRow]) -> None:
    fresh = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", encoding="utf-8") as f:
        if fresh:
            f.write(RESULT_HEADER + "\n")
        for r in rows:
            f.write(r.line())


def read_rows(path: str) -> list[ResultRow]:
    with open(path, encoding="utf-8") as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines or lines[0] != RESULT_HEADER:
        raise FormatError(f"{path}: unexpected results header "
                          f"{lines[0] if lines else '<empty>'!r}")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 9:
            raise FormatError(f"{path}: malformed row {ln!r}")
        rows.append(ResultRow(parts[0], parts[1], int(parts[2]), int(parts[3]),
                              int(parts[4]), int(parts[5]), parts[6], parts[7],
                              float(parts[8])))
    return rows


def _aggregate(rows: list[ResultRow]) -> dict[tuple, tuple[float, str]]:
    """(task, metric) -> (mean value over seeds/rows, direction)."""
    acc: dict[tuple, list] = {}
    for r in rows:
        acc.setdefault((r.task, r.metric), []).append(r)
    out = {}
    for key, rs in acc.items():
        directions = {r.direction for r in rs}
        direction = directions.pop() if len(directions) == 1 else ""
        out[key] = (float(np.mean([r.value for r in rs])), direction)
    return out


def build_report(image_rows: list[ResultRow], video_rows: list[ResultRow],
                 expected: Optional[dict[str, float]] = None,
                 expected_tol: float = 0.015) -> list[dict]:
    """Per-task relative change with direction handling and flags.

    ``expected`` maps task -> headline change fraction; computed values that
    disagree beyond ``expected_tol`` get a documented-discrepancy flag.
    """
    img = _aggregate(image_rows)
    vid = _aggregate(video_rows)
    if set(img) != set(vid):
        raise ValidationError(f"image/video task sets differ: "
                              f"{sorted(set(img) ^ set(vid))}")
    report = []
    for (task, metric) in sorted(img):
        x_i, dir_i = img[(task, metric)]
        x_v, dir_v = vid[(task, metric)]
        flags = []
        direction = dir_i or dir_v
        if not direction or dir_i != dir_v:
            flags.append("missing-direction")
            direction = direction or M.HIGHER
        change = M.relative_change(x_i, x_v, direction)
        if expected and task in expected:
            if abs(change - expected[task]) > expected_tol:
                flags.append(f"headline-mismatch(expected={expected[task]:+.3f}"
                             f";computed={change:+.3f})")
        report.append({"task": task, "metric": metric, "direction": direction,
                       "x_image": x_i, "x_video": x_v,
                       "rel_change": change, "flags": ";".join(flags)})
    return report


def report_csv(report: list[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("task,metric,direction,x_image,x_video,rel_change_pct,flags\n")
        for r in report:
            f.write(f"{r['task']},{r['metric']},{r['direction']},"
                    f"{r['x_image']:.6g},{r['x_video']:.6g},"
                    f"{100.0 * r['rel_change']:+.2f},{r['flags']}\n")


def report_svg(report: list[dict], path: str) -> None:
    """Byte-stable bar chart of relative performance change per task."""
    bar_h, gap, left, width = 22, 8, 150, 620
    n = len(report)
    height = 60 + n * (bar_h + gap)
    changes = [r["rel_change"] for r in report]
    span = max(0.1, max((abs(c) for c in changes), default=0.1))
    mid = left + (width - left - 20) / 2.0
    scale = (width - left - 20) / 2.0 / span

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" font-family="monospace" font-size="12">',
             f'<text x="{left}" y="20">relative change, video vs image '
             f'(positive = video better)</text>',
             f'<line x1="{mid:.1f}" y1="36" x2="{mid:.1f}" '
             f'y2="{height - 10}" stroke="#888"/>']
    y = 44
    for r in report:
        w = r["rel_change"] * scale
        x0 = mid if w >= 0 else mid + w
        color = "#2a7" if r["rel_change"] >= 0 else "#c55"
        flag = " *" if r["flags"] else ""
        parts.append(f'<text x="8" y="{y + 15}">{r["task"]}{flag}</text>')
        parts.append(f'<rect x="{x0:.2f}" y="{y}" width="{abs(w):.2f}" '
                     f'height="{bar_h}" fill="{color}"/>')
        parts.append(f'<text x="{mid + abs(w) * (1 if w >= 0 else -1) + (6 if w >= 0 else -70):.1f}" '
                     f'y="{y + 15}">{100 * r["rel_change"]:+.1f}%</text>')
        y += bar_h + gap
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(parts) + "\n")


def correlation_rows(rows: list[ResultRow]) -> list[dict]:
    """Pearson/Spearman of task metric vs training loss across checkpoints.

    Needs rows for several ckpt_steps plus matching task='generation',
    metric='train_loss' rows of the same mode.
    """
    by_mode: dict[str, list[ResultRow]] = {}
    for r in rows:
        by_mode.setdefault(r.mode, []).append(r)
    out = []
    for mode, rs in sorted(by_mode.items()):
        loss_by_step: dict[int, list[float]] = {}
        for r in rs:
            if r.metric == "train_loss":
                loss_by_step.setdefault(r.ckpt_step, []).append(r.value)
        if len(loss_by_step) < 2:
            continue
        tasks = sorted({(r.task, r.metric) for r in rs if r.metric != "train_loss"})
        for task, metric in tasks:
            per_step: dict[int, list[float]] = {}
            for r in rs:
                if r.task == task and r.metric == metric:
                    per_step.setdefault(r.ckpt_step, []).append(r.value)
            steps = sorted(set(per_step) & set(loss_by_step))
            if len(steps) < 2:
                continue
            xs = [float(np.mean(loss_by_step[s])) for s in steps]
            ys = [float(np.mean(per_step[s])) for s in steps]
            out.append({"mode": mode, "task": task, "metric": metric,
                        "n_checkpoints": len(steps),
                        "pearson_loss": M.pearson(xs, ys),
                        "spearman_loss": M.spearman(xs, ys)})
    return out
