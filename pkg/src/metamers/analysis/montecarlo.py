"""Monte-Carlo study over randomly drawn model sets."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import torch

from ..generation import GenerationConfig, generate_metamers
from ..model_zoo import MIDDLE, ClassMapping, ModelZoo, StageSpec
from .recognizability import cross_model_mean, recognizability

logger = logging.getLogger(__name__)


@dataclass
class ModelSetRun:
    set_id: str
    member_ids: list[str]
    recognizability_mean: float
    steps: int
    stage: StageSpec


def sample_model_sets(model_ids: Sequence[str], n_sets: int, size_range: tuple[int, int],
                      rng: np.random.Generator) -> list[list[str]]:
    """Draw ``n_sets`` member lists; size uniform in ``size_range`` (inclusive),
    members without replacement, returned in the order of ``model_ids``."""
    lo, hi = size_range
    if not 1 <= lo <= hi:
        raise ValueError(f"bad size range {size_range}")
    if len(model_ids) <= hi:
        raise ValueError(f"zoo of {len(model_ids)} models is too small for sets of up to {hi}")
    sets = []
    for _ in range(n_sets):
        size = int(rng.integers(lo, hi + 1))
        picked = set(rng.choice(len(model_ids), size=size, replace=False).tolist())
        sets.append([m for k, m in enumerate(model_ids) if k in picked])
    return sets


def monte_carlo_model_sets(zoo: ModelZoo, images: torch.Tensor, mapping: ClassMapping, n_sets: int = 100,
                           size_range: tuple[int, int] = (2, 10), steps: int = 10000, stage: StageSpec = MIDDLE,
                           batch: int = 80, rng: np.random.Generator | None = None,
                           config: GenerationConfig | None = None,
                           reference_ids: Sequence[str] | None = None) -> list[ModelSetRun]:
    """Generate metamers for each sampled set and score them with every zoo model outside it."""
    rng = rng if rng is not None else np.random.default_rng(0)
    config = config or GenerationConfig()
    x = images[:batch]
    ids = list(reference_ids)[:batch] if reference_ids is not None else [str(i) for i in range(x.shape[0])]
    refs = dict(zip(ids, x))
    runs = []
    for k, members in enumerate(sample_model_sets(zoo.ids, n_sets, size_range, rng)):
        handles = zoo.order(members)
        cfg = replace(config, total_steps=steps, repetitions=None)
        records = generate_metamers(x, handles, stage, cfg, reference_ids=ids)
        outsiders = [m for m in zoo if m.id not in members]
        results = recognizability(records, refs, mapping, outsiders, handles, model_set_id=f"mc{k:03d}")
        mean, _, _ = cross_model_mean(results)
        logger.info("set %d %s -> %.3f", k, members, mean)
        runs.append(ModelSetRun(f"mc{k:03d}", members, mean, records[0].total_steps, stage))
    return runs


def difference_in_means(runs: Sequence[ModelSetRun], model_id: str) -> tuple[int, float]:
    present = [r.recognizability_mean for r in runs if model_id in r.member_ids]
    absent = [r.recognizability_mean for r in runs if model_id not in r.member_ids]
    if not present:
        raise ValueError(f"model {model_id!r} appears in no run")
    if not absent:
        raise ValueError(f"no absent runs for model {model_id!r}")
    # plain left-to-right means, so the value is reproducible by hand
    return len(present), sum(present) / len(present) - sum(absent) / len(absent)


def difference_table(runs: Sequence[ModelSetRun], model_ids: Sequence[str]) -> list[tuple[str, int, float]]:
    """``(model, appearances, difference in means)`` rows, largest effect first.

    Models present in all or none of the runs are skipped.
    """
    rows = []
    for mid in model_ids:
        try:
            n, delta = difference_in_means(runs, mid)
        except ValueError:
            continue
        rows.append((mid, n, delta))
    return sorted(rows, key=lambda r: (-r[2], r[0]))
