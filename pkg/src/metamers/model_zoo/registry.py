"""Model registry, inversion-stage resolution and activation extraction."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

import torch
from torch import nn

from .architectures import ARCHITECTURES, BlockNet

logger = logging.getLogger(__name__)

FAMILIES = ("cnn", "transformer", "mlp", "other")

STAGE_FRACTIONS = {"early": 0.20, "middle": 0.50, "late": 0.80}


class ZooError(ValueError):
    pass


@dataclass(frozen=True)
class LayerRef:
    model_id: str
    index: int
    name: str


@dataclass(frozen=True)
class StageSpec:
    label: str
    fraction: float

    def __post_init__(self):
        if not 0.0 < self.fraction < 1.0:
            raise ZooError(f"stage fraction must lie in (0, 1), got {self.fraction}")
        if self.label in STAGE_FRACTIONS and not math.isclose(self.fraction, STAGE_FRACTIONS[self.label]):
            raise ZooError(f"stage {self.label!r} is fixed at {STAGE_FRACTIONS[self.label]}")
        if self.label not in STAGE_FRACTIONS and self.label != "custom":
            raise ZooError(f"unknown stage label {self.label!r}")

    @classmethod
    def named(cls, label: str) -> "StageSpec":
        if label not in STAGE_FRACTIONS:
            raise ZooError(f"unknown stage label {label!r}")
        return cls(label, STAGE_FRACTIONS[label])

    @classmethod
    def custom(cls, fraction: float) -> "StageSpec":
        return cls("custom", fraction)

    @classmethod
    def parse(cls, value: str | float) -> "StageSpec":
        if isinstance(value, str) and value in STAGE_FRACTIONS:
            return cls.named(value)
        return cls.custom(float(value))


EARLY, MIDDLE, LATE = (StageSpec.named(s) for s in ("early", "middle", "late"))


@dataclass
class ModelDescriptor:
    """Everything needed to rebuild a model apart from its weights."""

    id: str
    arch: str
    robust: bool = False
    input_size: tuple[int, int, int] = (3, 32, 32)
    num_classes: int = 3
    arch_kwargs: dict[str, Any] = field(default_factory=dict)
    family: str | None = None


@dataclass
class ModelHandle:
    id: str
    family: str
    robust: bool
    layers: list[LayerRef]
    input_size: tuple[int, int, int]
    backend: BlockNet
    descriptor: ModelDescriptor | None = None
    checkpoint: str | None = None
    stage_collisions: list[str] = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def preprocessing(self) -> dict[str, list[float]]:
        return {"mean": self.backend.mean.flatten().tolist(), "std": self.backend.std.flatten().tolist()}

    def layer(self, name_or_index: str | int) -> LayerRef:
        if isinstance(name_or_index, int):
            return self.layers[name_or_index]
        for ref in self.layers:
            if ref.name == name_or_index:
                return ref
        raise ZooError(f"model {self.id!r} has no layer {name_or_index!r}")

    @torch.no_grad()
    def logits(self, batch: torch.Tensor) -> torch.Tensor:
        self.backend.eval()
        return self.backend(_as_model_input(self, batch))


@dataclass
class ActivationMap:
    layer: LayerRef
    vectors: torch.Tensor

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]


def _as_model_input(model: ModelHandle, batch: torch.Tensor) -> torch.Tensor:
    if batch.ndim != 4 or tuple(batch.shape[1:]) != tuple(model.input_size):
        raise ZooError(f"batch shape {tuple(batch.shape)} does not match {model.id!r} input {model.input_size}")
    return batch.to(model.backend.mean.dtype)


def resolve_stage(model: ModelHandle, stage: StageSpec) -> LayerRef:
    """Pick ``layers[round_half_up(fraction * (D - 1))]``."""
    if not 0.0 < stage.fraction < 1.0:
        raise ZooError(f"stage fraction must lie in (0, 1), got {stage.fraction}")
    depth = model.depth
    if depth < 2:
        raise ZooError(f"model {model.id!r} has depth {depth}; stage resolution needs at least 2 layers")
    # round half up; the tiny epsilon absorbs products like 0.5 * 9 = 4.499999...
    index = int(math.floor(stage.fraction * (depth - 1) + 0.5 + 1e-9))
    return model.layers[index]


def stage_collisions(model: ModelHandle) -> list[str]:
    """Names of standard stages that land on an already-used layer."""
    if model.depth < 2:
        return []
    seen: dict[int, str] = {}
    clashes = []
    for label in STAGE_FRACTIONS:
        idx = resolve_stage(model, StageSpec.named(label)).index
        if idx in seen:
            clashes.append(f"{label}={seen[idx]}@{idx}")
        else:
            seen[idx] = label
    return clashes


def layer_output(model: ModelHandle, layer: LayerRef, batch: torch.Tensor, track_gradient: bool = False) -> torch.Tensor:
    """Raw (unflattened) output of ``layer``."""
    if layer.model_id != model.id or not 0 <= layer.index < model.depth or model.layers[layer.index] != layer:
        raise ZooError(f"layer/model mismatch: {layer} is not a layer of {model.id!r}")
    x = _as_model_input(model, batch)
    model.backend.eval()
    with torch.set_grad_enabled(track_gradient):
        return model.backend.forward_to(x, layer.index)


def extract_activations(model: ModelHandle, layer: LayerRef, batch: torch.Tensor,
                        track_gradient: bool = False) -> ActivationMap:
    out = layer_output(model, layer, batch, track_gradient)
    vectors = out.reshape(out.shape[0], -1)
    if not torch.isfinite(vectors).all():
        raise ZooError(f"non-finite activations at {model.id}:{layer.name}")
    return ActivationMap(layer, vectors)


class ModelZoo:
    """Ordered, id-unique collection of model handles.

    Iteration order is registration order, which is also the round-robin order
    used during generation.
    """

    def __init__(self):
        self._models: dict[str, ModelHandle] = {}

    def __len__(self) -> int:
        return len(self._models)

    def __iter__(self) -> Iterator[ModelHandle]:
        return iter(self._models.values())

    def __contains__(self, model_id: str) -> bool:
        return model_id in self._models

    def __getitem__(self, model_id: str) -> ModelHandle:
        try:
            return self._models[model_id]
        except KeyError:
            raise ZooError(f"unknown model id {model_id!r}") from None

    @property
    def ids(self) -> list[str]:
        return list(self._models)

    def order(self, model_ids: Sequence[str]) -> list[ModelHandle]:
        """Handles for ``model_ids`` sorted into registry order."""
        wanted = set(model_ids)
        missing = wanted - set(self._models)
        if missing:
            raise ZooError(f"unknown model ids {sorted(missing)}")
        return [m for m in self if m.id in wanted]

    def register_model(self, definition: ModelDescriptor, weights: Mapping[str, torch.Tensor] | str | os.PathLike | None = None,
                       seed: int | None = None) -> ModelHandle:
        """Build ``definition`` and load ``weights`` (a state dict or checkpoint path).

        Without weights the model keeps its random initialization, drawn from
        ``seed`` when given.
        """
        if definition.id in self._models:
            raise ZooError(f"duplicate id {definition.id!r}")
        if definition.arch not in ARCHITECTURES:
            raise ZooError(f"unknown architecture {definition.arch!r}")
        default_family, builder = ARCHITECTURES[definition.arch]
        family = definition.family or default_family
        if family not in FAMILIES:
            raise ZooError(f"unknown architecture family {family!r}")
        if seed is not None:
            torch.manual_seed(seed)
        net = builder(input_size=tuple(definition.input_size), num_classes=definition.num_classes,
                      **definition.arch_kwargs)
        checkpoint = None
        if weights is not None:
            if isinstance(weights, (str, os.PathLike)):
                checkpoint = str(weights)
                weights = torch.load(weights, map_location="cpu", weights_only=True)
            try:
                net.load_state_dict(weights)
            except RuntimeError as exc:
                raise ZooError(f"weight mismatch for {definition.id!r}: {exc}") from exc
        return self.add_module(definition.id, net, family=family, robust=definition.robust,
                               input_size=tuple(definition.input_size), descriptor=definition,
                               checkpoint=checkpoint)

    def add_module(self, model_id: str, net: BlockNet, family: str = "other", robust: bool = False,
                   input_size: tuple[int, int, int] = (3, 224, 224), descriptor: ModelDescriptor | None = None,
                   checkpoint: str | None = None) -> ModelHandle:
        """Register an already-built :class:`BlockNet` (e.g. an adapted pretrained network)."""
        if model_id in self._models:
            raise ZooError(f"duplicate id {model_id!r}")
        if family not in FAMILIES:
            raise ZooError(f"unknown architecture family {family!r}")
        net.eval()
        layers = [LayerRef(model_id, i, name) for i, name in enumerate(net.block_names)]
        handle = ModelHandle(model_id, family, robust, layers, tuple(input_size), net, descriptor, checkpoint)
        handle.stage_collisions = stage_collisions(handle)
        if handle.stage_collisions:
            logger.warning("model %s: stage layers collide (%s)", model_id, ", ".join(handle.stage_collisions))
        self._models[model_id] = handle
        return handle

    # manifest persistence ---------------------------------------------------

    MANIFEST_FIELDS = ("id", "arch", "family", "robust", "depth", "input_size", "num_classes", "checkpoint", "arch_kwargs")

    def write_manifest(self, path: str | os.PathLike) -> None:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=self.MANIFEST_FIELDS)
            writer.writeheader()
            for m in self:
                if m.descriptor is None:
                    raise ZooError(f"model {m.id!r} has no descriptor and cannot be written to a manifest")
                ckpt = m.checkpoint
                if ckpt is not None:
                    ckpt = os.path.relpath(ckpt, path.parent)
                writer.writerow({
                    "id": m.id, "arch": m.descriptor.arch, "family": m.family, "robust": int(m.robust),
                    "depth": m.depth, "input_size": "x".join(map(str, m.input_size)),
                    "num_classes": m.descriptor.num_classes, "checkpoint": ckpt or "",
                    "arch_kwargs": json.dumps(m.descriptor.arch_kwargs, sort_keys=True),
                })

    @classmethod
    def from_manifest(cls, path: str | os.PathLike) -> "ModelZoo":
        path = Path(path)
        zoo = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                desc = ModelDescriptor(
                    id=row["id"], arch=row["arch"], family=row["family"], robust=row["robust"] in ("1", "true", "True"),
                    input_size=tuple(int(v) for v in row["input_size"].split("x")),
                    num_classes=int(row["num_classes"]), arch_kwargs=json.loads(row.get("arch_kwargs") or "{}"),
                )
                ckpt = row.get("checkpoint") or None
                handle = zoo.register_model(desc, path.parent / ckpt if ckpt else None)
                if int(row["depth"]) != handle.depth:
                    raise ZooError(f"manifest depth {row['depth']} for {desc.id!r} disagrees with built depth {handle.depth}")
        return zoo

    def save_checkpoints(self, directory: str | os.PathLike) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for m in self:
            target = directory / f"{m.id}.pt"
            torch.save(m.backend.state_dict(), target)
            m.checkpoint = str(target)


def describe(handle: ModelHandle) -> dict[str, Any]:
    d = {"id": handle.id, "family": handle.family, "robust": handle.robust, "depth": handle.depth,
         "input_size": list(handle.input_size), "layers": [r.name for r in handle.layers]}
    if handle.descriptor is not None:
        d["descriptor"] = dataclasses.asdict(handle.descriptor)
    return d
