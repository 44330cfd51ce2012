"""The nine-metric suite and its tabular output."""
from __future__ import annotations

import csv
import math
import os
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import torch

from . import embedding, signal

HIGHER, LOWER = "higher_better", "lower_better"

DIRECTIONS = {
    "fid": LOWER, "ssim": HIGHER, "psnr": HIGHER, "vif": HIGHER, "lpips": LOWER,
    "rase": LOWER, "scc": HIGHER, "tv": LOWER, "clip_iqa": HIGHER,
}
ALL_METRICS = tuple(DIRECTIONS)
PAIRWISE = {"ssim": signal.ssim, "psnr": signal.psnr, "vif": signal.vif, "rase": signal.rase, "scc": signal.scc}


@dataclass
class MetricReport:
    metric_name: str
    values: list[float]
    direction: str
    available: bool = True
    flags: list[str] = field(default_factory=list)

    @property
    def set_level(self) -> bool:
        return self.metric_name == "fid"

    def tabular(self) -> list[float]:
        if self.metric_name == "psnr":
            return [signal.tabular_psnr(v) for v in self.values]
        return list(self.values)

    def summary(self) -> tuple[float, float]:
        vals = np.array([v for v in self.tabular() if not math.isnan(v)], dtype=np.float64)
        if vals.size == 0:
            return math.nan, math.nan
        return float(vals.mean()), float(vals.std(ddof=1)) if vals.size > 1 else 0.0


def unavailable(name: str, reason: str) -> MetricReport:
    return MetricReport(name, [], DIRECTIONS[name], available=False, flags=[reason])


def evaluate_pairs(references: torch.Tensor, metamers: torch.Tensor, metrics: Sequence[str] = ALL_METRICS,
                   fid_embedder=None, lpips_embedders: Sequence[embedding.Embedder] | None = None,
                   lpips_weights: Sequence[float] | None = None,
                   clip_embedder: embedding.ImageTextEmbedder | None = None,
                   prompt_pairs=embedding.DEFAULT_PROMPT_PAIRS) -> dict[str, MetricReport]:
    """Evaluate ``metrics`` on index-aligned (reference, metamer) batches.

    TV and CLIP-IQA score the metamer alone. Embedding metrics without an
    embedder are reported as unavailable rather than zero.
    """
    unknown = set(metrics) - set(DIRECTIONS)
    if unknown:
        raise ValueError(f"unknown metrics {sorted(unknown)}")
    if references.shape != metamers.shape:
        raise ValueError("reference and metamer batches differ in shape")
    out: dict[str, MetricReport] = {}
    for name in metrics:
        flags: list[str] = []
        if name in PAIRWISE:
            values = []
            for r, m in zip(references, metamers):
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always", signal.MetricWarning)
                    try:
                        values.append(PAIRWISE[name](r, m))
                    except ValueError as exc:
                        values.append(math.nan)
                        flags.append(str(exc))
                flags.extend(str(w.message) for w in caught)
            if name == "psnr" and any(math.isinf(v) for v in values):
                flags.append(f"identical pairs reported as {signal.PSNR_CAP_DB} dB")
            out[name] = MetricReport(name, values, DIRECTIONS[name], flags=sorted(set(flags)))
        elif name == "tv":
            out[name] = MetricReport(name, [signal.total_variation(m) for m in metamers], DIRECTIONS[name])
        elif name == "fid":
            if fid_embedder is None:
                out[name] = unavailable(name, "no embedder configured")
            else:
                out[name] = MetricReport(name, [embedding.fid(references, metamers, fid_embedder)], DIRECTIONS[name])
        elif name == "lpips":
            if not lpips_embedders:
                out[name] = unavailable(name, "no embedder configured")
            else:
                vals = embedding.lpips(references, metamers, lpips_embedders, weights=lpips_weights)
                out[name] = MetricReport(name, vals.tolist(), DIRECTIONS[name])
        elif name == "clip_iqa":
            if clip_embedder is None:
                out[name] = unavailable(name, "no image-text embedding provider")
            else:
                vals = [float(np.mean(embedding.clip_iqa(m, prompt_pairs, clip_embedder))) for m in metamers]
                out[name] = MetricReport(name, vals, DIRECTIONS[name])
    return out


def normalized_view(reports: Mapping[str, MetricReport]) -> dict[str, list[float]]:
    """Each metric divided by its largest absolute tabular value (max becomes 1)."""
    view = {}
    for name, rep in reports.items():
        vals = np.array(rep.tabular(), dtype=np.float64)
        peak = np.nanmax(np.abs(vals)) if vals.size else math.nan
        view[name] = (vals / peak).tolist() if peak and not math.isnan(peak) else vals.tolist()
    return view


def write_metric_csv(path: str | os.PathLike, pair_ids: Sequence[str], reports: Mapping[str, MetricReport]) -> None:
    """One row per pair plus ``mean`` / ``std`` summary rows; set-level metrics fill the summary only."""
    names = [n for n, r in reports.items() if r.available]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pair"] + names)
        for i, pid in enumerate(pair_ids):
            row = [pid]
            for n in names:
                rep = reports[n]
                row.append("" if rep.set_level else _fmt(rep.tabular()[i]))
            writer.writerow(row)
        stats = {n: reports[n].summary() for n in names}
        writer.writerow(["mean"] + [_fmt(stats[n][0]) for n in names])
        writer.writerow(["std"] + [_fmt(stats[n][1]) for n in names])


def write_metric_directions(path: str | os.PathLike, reports: Mapping[str, MetricReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "direction", "available", "mean", "std", "flags"])
        for n, rep in reports.items():
            mean, std = rep.summary() if rep.available else (math.nan, math.nan)
            writer.writerow([n, rep.direction, int(rep.available), _fmt(mean), _fmt(std), "; ".join(rep.flags)])


def _fmt(v: float) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.6g}"
