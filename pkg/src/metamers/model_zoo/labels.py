"""Fine-to-coarse label mapping (e.g. ImageNet synsets onto 16 basic categories)."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Mapping, Sequence

import torch

from .registry import ModelHandle, ZooError

# The 16 basic-level categories of the psychophysics benchmark set.
SIXTEEN_CLASSES = (
    "airplane", "bear", "bicycle", "bird", "boat", "bottle", "car", "cat",
    "chair", "clock", "dog", "elephant", "keyboard", "knife", "oven", "truck",
)

OTHER = -1


@dataclass(frozen=True)
class ClassMapping:
    entries: Mapping[int, int]
    class_names: tuple[str, ...]

    def __post_init__(self):
        n = len(self.class_names)
        if len(set(self.class_names)) != n:
            raise ZooError("duplicate coarse class names")
        used = set(self.entries.values())
        if not used <= set(range(n)):
            raise ZooError(f"coarse ids outside 0..{n - 1}")
        if used != set(range(n)):
            missing = sorted(set(range(n)) - used)
            raise ZooError(f"coarse classes without any fine label: {[self.class_names[i] for i in missing]}")

    @classmethod
    def identity(cls, class_names: Sequence[str]) -> "ClassMapping":
        return cls({i: i for i in range(len(class_names))}, tuple(class_names))

    @classmethod
    def from_csv(cls, path: str | os.PathLike, class_names: Sequence[str] | None = None) -> "ClassMapping":
        """Read a ``fine_id,coarse_name`` file (header row required)."""
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header[:2]] != ["fine_id", "coarse_name"]:
                raise ZooError(f"{path}: expected header 'fine_id,coarse_name'")
            rows = [(int(r[0]), r[1].strip()) for r in reader if r]
        if class_names is None:
            class_names = sorted({name for _, name in rows})
        index = {name: i for i, name in enumerate(class_names)}
        entries: dict[int, int] = {}
        for fine, name in rows:
            if name not in index:
                raise ZooError(f"{path}: unknown coarse class {name!r}")
            if fine in entries and entries[fine] != index[name]:
                raise ZooError(f"{path}: fine id {fine} mapped to two coarse classes")
            entries[fine] = index[name]
        return cls(entries, tuple(class_names))

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["fine_id", "coarse_name"])
            for fine in sorted(self.entries):
                writer.writerow([fine, self.class_names[self.entries[fine]]])

    def coarse(self, fine_id: int) -> int:
        return self.entries.get(int(fine_id), OTHER)

    def index(self, name: str) -> int:
        return self.class_names.index(name)


def predict_coarse(model: ModelHandle, batch: torch.Tensor, mapping: ClassMapping) -> list[int]:
    """Argmax over the fine logits, then map; unmapped labels become :data:`OTHER`."""
    fine = model.logits(batch).argmax(dim=1)
    return [mapping.coarse(f) for f in fine.tolist()]


def coarse_accuracy(predicted: Sequence[int], target: Sequence[int], exclude_other: bool = False) -> float:
    """Fraction of matches; :data:`OTHER` predictions count as wrong unless excluded."""
    pairs = [(p, t) for p, t in zip(predicted, target, strict=True) if not (exclude_other and p == OTHER)]
    if not pairs:
        return float("nan")
    return sum(p == t and p != OTHER for p, t in pairs) / len(pairs)
