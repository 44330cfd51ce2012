"""Figures and report tables built from a finished run directory."""
from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .experiment import RunManifest, _write_rows  # noqa: E402

logger = logging.getLogger(__name__)

ARROWS = {"higher_better": "↑", "lower_better": "↓"}


def _read(path: Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _num(v: str) -> float:
    return float(v) if v not in ("", None) else math.nan


def recognizability_curves(manifest: RunManifest, out: Path) -> None:
    rows = _read(manifest.path("recognizability_summary"))
    curves: dict[str, list[tuple[float, str, float, float]]] = defaultdict(list)
    for r in rows:
        curves[r["model_set"]].append((float(r["fraction"]), r["stage"], _num(r["mean"]), _num(r["std"])))
    table = []
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for set_id, pts in curves.items():
        pts.sort()
        x = np.arange(len(pts))
        ax.errorbar(x, [p[2] for p in pts], yerr=[0 if math.isnan(p[3]) else p[3] for p in pts], marker="o",
                    capsize=3, label=set_id)
        ax.set_xticks(x, [p[1] for p in pts])
        table += [[set_id, p[1], p[0], p[2], p[3]] for p in pts]
    ax.set_ylim(0, 1)
    ax.set_xlabel("inversion stage")
    ax.set_ylabel("recognizability")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out / "recognizability.png", dpi=120)
    plt.close(fig)
    manifest.add("figure/recognizability", out / "recognizability.png")
    manifest.add("report/recognizability_curves", _write_rows(
        out / "recognizability_curves.csv", ["model_set", "stage", "fraction", "mean", "std"], table))


def metric_bars(manifest: RunManifest, out: Path) -> None:
    rows = [r for r in _read(manifest.path("metric_summary")) if r["available"] == "1"]
    metrics = list(dict.fromkeys(r["metric"] for r in rows))
    if not metrics:
        return
    cols = min(3, len(metrics))
    nrows = math.ceil(len(metrics) / cols)
    fig, axes = plt.subplots(nrows, cols, figsize=(3.2 * cols, 2.6 * nrows), squeeze=False)
    for ax, name in zip(axes.flat, metrics):
        sel = [r for r in rows if r["metric"] == name]
        keys = [f"{r['model_set']}\n{r['stage']}" for r in sel]
        ax.bar(range(len(sel)), [_num(r["mean"]) for r in sel],
               yerr=[0 if math.isnan(_num(r["std"])) else _num(r["std"]) for r in sel], capsize=2)
        ax.set_xticks(range(len(sel)), keys, fontsize=6)
        ax.set_title(f"{name} {ARROWS[sel[0]['direction']]}", fontsize=9)
    for ax in list(axes.flat)[len(metrics):]:
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(out / "metrics.png", dpi=120)
    plt.close(fig)
    manifest.add("figure/metrics", out / "metrics.png")
    manifest.add("report/metric_table", _write_rows(
        out / "metric_table.csv", ["model_set", "stage", "metric", "direction", "mean", "std"],
        ([r["model_set"], r["stage"], r["metric"], r["direction"], r["mean"], r["std"]] for r in rows)))


def jsd_heatmap(manifest: RunManifest, out: Path) -> None:
    jsd_rows = _read(manifest.path("heatmap"))
    unin_rows = _read(manifest.path("heatmap_uninformative"))
    names = [r["label"] for r in jsd_rows]
    jsd = np.array([[_num(r[n]) for n in names] for r in jsd_rows])
    unin = np.array([[r[n] == "1" for n in names] for r in unin_rows])
    size = max(4.0, 0.25 * len(names) + 2)
    fig, ax = plt.subplots(figsize=(size + 1, size))
    im = ax.imshow(jsd, vmin=0, vmax=1, cmap="viridis")
    for i, j in zip(*np.nonzero(unin)):
        ax.add_patch(plt.Rectangle((j - 0.5, i - 0.5), 1, 1, fill=False, hatch="///", edgecolor="white", lw=0))
    short = [n.replace("reference_", "ref_").replace("metamer", "met") for n in names]
    ax.set_xticks(range(len(names)), short, rotation=90, fontsize=5)
    ax.set_yticks(range(len(names)), short, fontsize=5)
    fig.colorbar(im, ax=ax, label="JSD (bits)")
    fig.tight_layout()
    fig.savefig(out / "heatmap.png", dpi=120)
    plt.close(fig)
    manifest.add("figure/heatmap", out / "heatmap.png")


def emit_reports(manifest: RunManifest) -> list[str]:
    """Write whichever figures the run's artifacts allow; returns their names."""
    out = manifest.run_dir / "figures"
    out.mkdir(exist_ok=True)
    made = []
    for needed, fn in (("recognizability_summary", recognizability_curves), ("metric_summary", metric_bars),
                       ("heatmap", jsd_heatmap)):
        if needed in manifest.artifact_paths:
            fn(manifest, out)
            made.append(fn.__name__)
        else:
            logger.info("no %s artifact; skipping %s", needed, fn.__name__)
    manifest.save()
    return made
