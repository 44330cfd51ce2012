"""Cross-model recognizability of metamers."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import torch

from ..generation import MetamerRecord
from ..model_zoo import ClassMapping, ModelHandle, StageSpec, coarse_accuracy, predict_coarse


@dataclass
class RecognizabilityResult:
    evaluator_model_id: str
    stage: StageSpec
    accuracy: float
    n: int
    excluded: bool
    accuracy_ground_truth: float | None = None
    model_set_id: str = ""


def ensemble_targets(generators: Sequence[ModelHandle], references: torch.Tensor, mapping: ClassMapping) -> list[int]:
    """Majority coarse vote of the generating models on each reference.

    Ties go to the label voted by the earliest model in ``generators``.
    """
    votes = [predict_coarse(g, references, mapping) for g in generators]
    targets = []
    for per_image in zip(*votes):
        counts = Counter(per_image)
        top = max(counts.values())
        targets.append(next(v for v in per_image if counts[v] == top))
    return targets


def recognizability(metamers: Sequence[MetamerRecord], references: Mapping[str, torch.Tensor], mapping: ClassMapping,
                    evaluators: Sequence[ModelHandle], generators: Sequence[ModelHandle],
                    labels: Mapping[str, int] | None = None, model_set_id: str = "",
                    exclude_other: bool = False) -> list[RecognizabilityResult]:
    """Accuracy of each evaluator on the metamers against the generators' labels.

    Evaluators that took part in generation are flagged ``excluded``.
    """
    if not evaluators:
        raise ValueError("empty evaluator list")
    if not metamers:
        raise ValueError("no metamers to evaluate")
    ids = [r.reference_id for r in metamers]
    missing = [i for i in ids if i not in references]
    if missing:
        raise KeyError(f"metamers without a reference: {missing[:5]}")
    ref_batch = torch.stack([references[i] for i in ids])
    met_batch = torch.stack([r.metamer for r in metamers])
    targets = ensemble_targets(generators, ref_batch, mapping)
    members = set(metamers[0].model_set_ids)
    stage = metamers[0].stage
    truth = [labels[i] for i in ids] if labels is not None else None
    results = []
    for ev in evaluators:
        pred = predict_coarse(ev, met_batch, mapping)
        results.append(RecognizabilityResult(
            evaluator_model_id=ev.id, stage=stage, accuracy=coarse_accuracy(pred, targets, exclude_other),
            n=len(ids), excluded=ev.id in members,
            accuracy_ground_truth=None if truth is None else coarse_accuracy(pred, truth, exclude_other),
            model_set_id=model_set_id,
        ))
    return results


def cross_model_mean(results: Sequence[RecognizabilityResult]) -> tuple[float, float, int]:
    """Mean, standard deviation and count over the non-excluded evaluators."""
    acc = np.array([r.accuracy for r in results if not r.excluded], dtype=np.float64)
    if acc.size == 0:
        return float("nan"), float("nan"), 0
    return float(acc.mean()), float(acc.std(ddof=1)) if acc.size > 1 else 0.0, int(acc.size)


def binomial_tail(k: int, n: int, p: float) -> float:
    """``P[X >= k]`` for ``X ~ Binomial(n, p)``."""
    from scipy.stats import binom

    return float(binom.sf(k - 1, n, p))
