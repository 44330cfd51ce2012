"""Typed run configuration loaded from a sectioned TOML (or JSON snapshot) file."""
from __future__ import annotations

import dataclasses
import json
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import tomli

from ..generation import GenerationConfig


class ConfigError(ValueError):
    pass


@dataclass
class DatasetSection:
    kind: str = "synthetic"  # "synthetic" or "folder"
    root: str = ""
    mapping: str = ""
    image_size: list[int] = field(default_factory=lambda: [3, 32, 32])
    subset: str = ""
    n_references: int = 16
    # synthetic shapes only
    n_per_class: int = 20
    noise: float = 0.06


@dataclass
class ModelsSection:
    manifest: str = ""
    train: bool = True
    preset: str = "desk"
    train_per_class: int = 400
    train_epochs: int = 20
    train_lr: float = 3e-3
    sets: dict[str, list[str]] = field(default_factory=lambda: {"cnn_pair": ["cnn_a", "cnn_b"]})
    evaluators: list[str] = field(default_factory=list)


@dataclass
class GenerationSection:
    mode: str = "metamer"  # "metamer" or "adversarial"
    stages: list[str] = field(default_factory=lambda: ["early", "middle", "late"])
    steps_per_model: int = 10
    repetitions: int = 0  # 0: derive from total_steps
    total_steps: int = 40000
    epsilon: float = 10000.0
    lr_start: float = 1.0
    lr_end: float = 0.005
    init_radius: float = 0.1
    init_offset: float = 0.5
    batch_size: int = 16


@dataclass
class EvaluationSection:
    recognizability: bool = True
    exclude_other: bool = False
    metrics: list[str] = field(default_factory=lambda: ["ssim", "psnr", "vif", "rase", "scc", "tv", "fid", "lpips", "clip_iqa"])
    embedder: str = ""
    embedder_layer: str = ""
    lpips_layers: list[str] = field(default_factory=list)
    repsim: bool = True
    repsim_evaluators: list[str] = field(default_factory=list)
    montecarlo: bool = False
    mc_n_sets: int = 100
    mc_size_min: int = 2
    mc_size_max: int = 10
    mc_steps: int = 10000
    mc_batch: int = 80
    mc_stage: str = "middle"


@dataclass
class Config:
    seed: int = 0
    deterministic: bool = False
    dataset: DatasetSection = field(default_factory=DatasetSection)
    models: ModelsSection = field(default_factory=ModelsSection)
    generation: GenerationSection = field(default_factory=GenerationSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    base_dir: str = "."

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d

    def resolve_path(self, value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def generation_config(self, seed: int) -> GenerationConfig:
        g = self.generation
        return GenerationConfig(
            steps_per_model=g.steps_per_model, repetitions=g.repetitions or None, total_steps=g.total_steps,
            epsilon=g.epsilon, lr_start=g.lr_start, lr_end=g.lr_end, init_radius=g.init_radius,
            init_offset=g.init_offset, seed=seed,
        )


SECTIONS = {"dataset": DatasetSection, "models": ModelsSection, "generation": GenerationSection,
            "evaluation": EvaluationSection}
TOP_LEVEL = {"seed": int, "deterministic": bool}


def _check(value: Any, typ: Any, where: str) -> Any:
    origin = typing.get_origin(typ)
    if typ is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return value
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if typ is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        (item,) = typing.get_args(typ)
        return [_check(v, item, f"{where}[{i}]") for i, v in enumerate(value)]
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a table, got {value!r}")
        k_t, v_t = typing.get_args(typ)
        return {_check(k, k_t, where): _check(v, v_t, f"{where}.{k}") for k, v in value.items()}
    raise ConfigError(f"{where}: unsupported type {typ}")


def _section(cls, raw: dict[str, Any], name: str):
    hints = typing.get_type_hints(cls)
    unknown = set(raw) - set(hints)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
    return cls(**{k: _check(v, hints[k], f"{name}.{k}") for k, v in raw.items()})


def parse_config(raw: dict[str, Any], base_dir: str | os.PathLike = ".") -> Config:
    unknown = set(raw) - set(SECTIONS) - set(TOP_LEVEL)
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(sorted(unknown))}")
    kwargs: dict[str, Any] = {"base_dir": str(base_dir)}
    for key, typ in TOP_LEVEL.items():
        if key in raw:
            kwargs[key] = _check(raw[key], typ, key)
    for name, cls in SECTIONS.items():
        section = raw.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"[{name}] must be a table")
        kwargs[name] = _section(cls, section, name)
    cfg = Config(**kwargs)
    validate(cfg)
    return cfg


def validate(cfg: Config) -> None:
    d, m, g, e = cfg.dataset, cfg.models, cfg.generation, cfg.evaluation
    if d.kind not in ("synthetic", "folder"):
        raise ConfigError(f"dataset.kind must be 'synthetic' or 'folder', got {d.kind!r}")
    if d.kind == "folder" and not d.root:
        raise ConfigError("missing required key dataset.root for a folder dataset")
    if len(d.image_size) != 3:
        raise ConfigError("dataset.image_size must be [channels, height, width]")
    if not m.train and not m.manifest:
        raise ConfigError("missing required [models] source: set models.manifest or models.train = true")
    if not m.sets:
        raise ConfigError("models.sets defines no model set")
    for name, members in m.sets.items():
        if not members:
            raise ConfigError(f"model set {name!r} is empty")
    if g.mode not in ("metamer", "adversarial"):
        raise ConfigError(f"generation.mode must be 'metamer' or 'adversarial', got {g.mode!r}")
    if not g.stages:
        raise ConfigError("generation.stages is empty")
    try:
        cfg.generation_config(cfg.seed)
    except ValueError as exc:
        raise ConfigError(f"[generation]: {exc}") from exc
    if e.mc_size_min > e.mc_size_max:
        raise ConfigError("evaluation.mc_size_min exceeds mc_size_max")


def load_config(path: str | os.PathLike | None) -> Config:
    """Load a ``.toml`` config (or a ``.json`` snapshot); ``None`` gives the defaults."""
    if path is None:
        return parse_config({})
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        raw = json.loads(text) if path.suffix == ".json" else tomli.loads(text)
    except (tomli.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    base = raw.pop("base_dir", None) if path.suffix == ".json" else None
    return parse_config(raw, base if base is not None else path.parent)


def snapshot(cfg: Config) -> dict[str, Any]:
    d = cfg.to_dict()
    d["base_dir"] = str(Path(cfg.base_dir).resolve())
    return d
