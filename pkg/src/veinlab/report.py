"""Construction reports: a tab-separated summary plus matplotlib figures."""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .construction import Trace  # noqa: E402
from .tree_core import format_path  # noqa: E402

SUMMARY_COLUMNS = ("triple", "rho", "attention", "anchors", "longest_image", "last_change", "idle")


def triple_label(t) -> str:
    return format_path(tuple(t))


def summary_rows(trace: Trace) -> list:
    rows = []
    for t in trace.triples:
        run = trace.runs[t]
        anchors = trace.final_anchors(t)
        rows.append({
            "triple": triple_label(t),
            "rho": trace.rhos[t],
            "attention": sum(run.attention.values()),
            "anchors": len(anchors),
            "longest_image": max((len(v) for v in anchors.values()), default=0),
            "last_change": max(run.last_change.values(), default=0),
            "idle": run.idle,
        })
    return rows


def summary_tsv(trace: Trace) -> str:
    lines = ["\t".join(SUMMARY_COLUMNS)]
    for row in summary_rows(trace):
        lines.append("\t".join(str(row[c]).lower() if isinstance(row[c], bool) else str(row[c])
                               for c in SUMMARY_COLUMNS))
    return "\n".join(lines) + "\n"


def _image_growth(trace: Trace, t) -> tuple:
    """Stages and longest anchor image after each copy change, held to the end."""
    xs, ys = [], []
    for stage, anchors in trace.snapshots.get(t, []):
        xs.append(stage)
        ys.append(max((len(v) for v in anchors.values()), default=0))
    if xs:
        last = max(xs[-1], min(trace.stages, trace.depth))
        xs.append(last)
        ys.append(ys[-1])
    return xs, ys


def plot_image_growth(trace: Trace, path: str) -> str:
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for t in trace.triples:
        xs, ys = _image_growth(trace, t)
        ax.step(xs, ys, where="post", label=triple_label(t))
    ax.set_xlabel("stage")
    ax.set_ylabel("longest copy image")
    ax.set_title("copy growth per triple")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_attention(trace: Trace, path: str) -> str:
    labels, counts = [], []
    for t in trace.triples:
        for xi, n in sorted(trace.runs[t].attention.items()):
            labels.append(f"{triple_label(t)} {xi}")
            counts.append(n)
    fig, ax = plt.subplots(figsize=(6.4, max(2.0, 0.35 * len(labels) + 1.0)))
    if labels:
        ax.barh(range(len(labels)), counts)
        ax.set_yticks(range(len(labels)), labels, fontsize="small")
        ax.invert_yaxis()
    else:
        ax.text(0.5, 0.5, "no strategy acted", ha="center", va="center", transform=ax.transAxes)
        ax.set_yticks([])
    ax.set_xlabel("attention events")
    ax.set_title("attention per strategy")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def write_report(trace: Trace, outdir: str) -> list:
    """Write summary.tsv, growth.png and attention.png; returns the paths."""
    os.makedirs(outdir, exist_ok=True)
    tsv = os.path.join(outdir, "summary.tsv")
    with open(tsv, "w", encoding="utf-8") as fh:
        fh.write(summary_tsv(trace))
    return [tsv,
            plot_image_growth(trace, os.path.join(outdir, "growth.png")),
            plot_attention(trace, os.path.join(outdir, "attention.png"))]
