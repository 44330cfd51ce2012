"""Run orchestration and on-disk persistence.

A run directory holds::

    manifest.json  config.json  models/  metamers/  traces/  metrics/  analysis/  figures/

Every random draw comes from a substream named after the job it feeds, so a
single (model set, stage) job gives the same output no matter which other jobs
run alongside it.
"""
from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import torch

from ..analysis import (
    PAIRINGS,
    DistributionLabel,
    cross_model_mean,
    difference_table,
    divergence_heatmap,
    kde_density,
    monte_carlo_model_sets,
    recognizability,
    sample_pairs,
)
from ..generation import MetamerRecord, generate_adversarial_mode, generate_metamers
from ..image_metrics import evaluate_pairs, layer_embedder, write_metric_csv, write_metric_directions
from ..image_metrics.suite import _fmt
from ..model_zoo import ClassMapping, ModelZoo, StageSpec, extract_activations, resolve_stage
from . import seeding
from .config import Config, ConfigError, parse_config, snapshot
from .data import SHAPE_CLASSES, LabeledImages, ingest_dataset, save_image, synthetic_shapes
from .training import preset_ids, train_preset

logger = logging.getLogger(__name__)


class RunError(RuntimeError):
    pass


@dataclass
class RunManifest:
    run_id: str
    run_dir: Path
    config_snapshot: dict[str, Any]
    seed: int
    model_set_ids: list[str]
    stages: list[str]
    artifact_paths: dict[str, str] = field(default_factory=dict)
    started: str = ""
    finished: str = ""

    def path(self, name: str) -> Path:
        return self.run_dir / self.artifact_paths[name]

    def add(self, name: str, path: Path) -> None:
        self.artifact_paths[name] = Path(path).relative_to(self.run_dir).as_posix()

    def missing_artifacts(self) -> list[str]:
        return [n for n, p in self.artifact_paths.items() if not (self.run_dir / p).exists()]

    def save(self) -> Path:
        target = self.run_dir / "manifest.json"
        data = {
            "run_id": self.run_id, "seed": self.seed, "model_set_ids": self.model_set_ids, "stages": self.stages,
            "artifact_paths": dict(sorted(self.artifact_paths.items())), "started": self.started,
            "finished": self.finished, "config_snapshot": self.config_snapshot,
        }
        target.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")
        return target

    @classmethod
    def load(cls, run_dir: str | os.PathLike) -> "RunManifest":
        run_dir = Path(run_dir)
        path = run_dir / "manifest.json"
        if not path.exists():
            raise RunError(f"{run_dir} is not a run directory (no manifest.json)")
        d = json.loads(path.read_text(encoding="utf-8"))
        return cls(d["run_id"], run_dir, d["config_snapshot"], d["seed"], d["model_set_ids"], d["stages"],
                   d["artifact_paths"], d.get("started", ""), d.get("finished", ""))


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _job(set_id: str, stage: str) -> str:
    return f"{set_id}__{stage}"


def fresh_run_dir(out_root: str | os.PathLike, run_id: str) -> Path:
    """``out_root/run_id``, suffixed ``-1``, ``-2``, ... if it already exists."""
    out_root = Path(out_root)
    candidate, k = out_root / run_id, 0
    while candidate.exists():
        k += 1
        candidate = out_root / f"{run_id}-{k}"
    candidate.mkdir(parents=True)
    return candidate


@dataclass
class Run:
    """Everything a job needs: resolved config, zoo, references and the manifest."""

    config: Config
    manifest: RunManifest
    zoo: ModelZoo
    mapping: ClassMapping
    references: LabeledImages

    @property
    def run_dir(self) -> Path:
        return self.manifest.run_dir

    @property
    def seed(self) -> int:
        return self.config.seed

    def stages(self) -> list[StageSpec]:
        return [StageSpec.parse(s) for s in self.config.generation.stages]

    def evaluators(self):
        ids = self.config.models.evaluators or self.zoo.ids
        return self.zoo.order(ids)

    def reference_map(self) -> dict[str, torch.Tensor]:
        return dict(zip(self.references.ids, self.references.images))

    def label_map(self) -> dict[str, int]:
        return {i: int(l) for i, l in zip(self.references.ids, self.references.labels)}

    def directory(self, name: str) -> Path:
        d = self.run_dir / name
        d.mkdir(parents=True, exist_ok=True)
        return d


# ---------------------------------------------------------------------------
# setup


def _mapping(cfg: Config) -> ClassMapping:
    d = cfg.dataset
    if d.mapping:
        return ClassMapping.from_csv(cfg.resolve_path(d.mapping))
    if d.kind == "synthetic":
        return ClassMapping.identity(SHAPE_CLASSES)
    root = cfg.resolve_path(d.root)
    return ClassMapping.identity(sorted(p.name for p in root.iterdir() if p.is_dir()))


def load_references(cfg: Config, mapping: ClassMapping) -> LabeledImages:
    d = cfg.dataset
    c, h, w = d.image_size
    if d.kind == "synthetic":
        if h != w:
            raise ConfigError("synthetic shapes are square; image_size height and width must match")
        data = synthetic_shapes(d.n_per_class, size=h, seed=seeding.substream_seed(cfg.seed, "data/test"), noise=d.noise)
    else:
        subset = None
        if d.subset:
            lines = cfg.resolve_path(d.subset).read_text(encoding="utf-8").splitlines()
            subset = [s.strip() for s in lines if s.strip()]
        data = ingest_dataset(cfg.resolve_path(d.root), mapping, (c, h, w), subset=subset)
        if data.skipped:
            logger.warning("%d undecodable images skipped", data.skipped)
    n = d.n_references
    if 0 < n < len(data):
        picks = seeding.numpy_stream(cfg.seed, "references").permutation(len(data))[:n]
        data = data.subset(sorted(picks.tolist()))
    return data


def _check_sets(cfg: Config, available: Sequence[str]) -> None:
    for name, members in cfg.models.sets.items():
        if not members:
            raise ConfigError(f"model set {name!r} is empty")
        unknown = [m for m in members if m not in available]
        if unknown:
            raise ConfigError(f"model set {name!r} names unknown models {unknown}")
        if len(set(members)) != len(members):
            raise ConfigError(f"model set {name!r} lists a model twice")
    for m in cfg.models.evaluators + cfg.evaluation.repsim_evaluators:
        if m not in available:
            raise ConfigError(f"unknown evaluator {m!r}")
    if cfg.evaluation.embedder and cfg.evaluation.embedder not in available:
        raise ConfigError(f"unknown embedder model {cfg.evaluation.embedder!r}")


def load_zoo(cfg: Config, run_dir: Path | None = None) -> ModelZoo:
    """Zoo from the run's own ``models/`` when present, else from the configured manifest."""
    if run_dir is not None and (run_dir / "models" / "manifest.csv").exists():
        return ModelZoo.from_manifest(run_dir / "models" / "manifest.csv")
    if cfg.models.manifest:
        return ModelZoo.from_manifest(cfg.resolve_path(cfg.models.manifest))
    raise RunError("no trained models available for this run")


def prepare_run(cfg: Config, out_root: str | os.PathLike, run_id: str | None = None) -> Run:
    """Validate, create a fresh run directory, then load or train the zoo."""
    if cfg.models.manifest:
        zoo = ModelZoo.from_manifest(cfg.resolve_path(cfg.models.manifest))
        _check_sets(cfg, zoo.ids)
    else:
        _check_sets(cfg, preset_ids(cfg.models.preset))
        zoo = None
    mapping = _mapping(cfg)
    run_dir = fresh_run_dir(out_root, run_id or f"seed{cfg.seed}")
    manifest = RunManifest(run_dir.name, run_dir, snapshot(cfg), cfg.seed, list(cfg.models.sets),
                           list(cfg.generation.stages), started=_now())
    (run_dir / "config.json").write_text(json.dumps(snapshot(cfg), indent=2) + "\n", encoding="utf-8")
    manifest.add("config", run_dir / "config.json")
    if zoo is None:
        m = cfg.models
        c, h, _ = cfg.dataset.image_size
        train = synthetic_shapes(m.train_per_class, size=h, seed=seeding.substream_seed(cfg.seed, "data/train"),
                                 noise=cfg.dataset.noise)
        zoo = train_preset(m.preset, train, seed=cfg.seed, epochs=m.train_epochs, lr=m.train_lr,
                           out_dir=run_dir / "models", num_classes=len(mapping.class_names))
        manifest.add("models", run_dir / "models" / "manifest.csv")
    references = load_references(cfg, mapping)
    manifest.save()
    return Run(cfg, manifest, zoo, mapping, references)


def open_run(run_dir: str | os.PathLike) -> Run:
    manifest = RunManifest.load(run_dir)
    snap = dict(manifest.config_snapshot)
    base = snap.pop("base_dir", ".")
    cfg = parse_config(snap, base)
    zoo = load_zoo(cfg, manifest.run_dir)
    mapping = _mapping(cfg)
    return Run(cfg, manifest, zoo, mapping, load_references(cfg, mapping))


# ---------------------------------------------------------------------------
# generation


def _chunks(n: int, size: int) -> Iterable[slice]:
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


def generate_job(run: Run, set_id: str, stage: StageSpec) -> list[MetamerRecord]:
    cfg = run.config
    handles = run.zoo.order(cfg.models.sets[set_id])
    refs = run.references
    records: list[MetamerRecord] = []
    for k, part in enumerate(_chunks(len(refs), cfg.generation.batch_size)):
        gen_cfg = cfg.generation_config(seeding.substream_seed(run.seed, f"init/{set_id}/{stage.label}/{k}"))
        x, ids, labels = refs.images[part], refs.ids[part], refs.labels[part].tolist()
        if cfg.generation.mode == "adversarial":
            records += generate_adversarial_mode(x, labels, handles, stage, gen_cfg, reference_ids=ids)
        else:
            records += generate_metamers(x, handles, stage, gen_cfg, reference_ids=ids, labels=labels)
    return records


def save_records(run: Run, set_id: str, stage: StageSpec, records: Sequence[MetamerRecord]) -> None:
    job = _job(set_id, stage.label)
    img_dir = run.directory("metamers") / set_id / stage.label
    for r in records:
        target = img_dir / f"{r.reference_id}.png"
        target.parent.mkdir(parents=True, exist_ok=True)
        save_image(r.metamer, target)
    npz = run.directory("metamers") / f"{job}.npz"
    np.savez_compressed(
        npz, metamers=np.stack([r.metamer.numpy() for r in records]).astype(np.float32),
        ids=np.array([r.reference_id for r in records]), traces=np.array([r.loss_trace for r in records]),
        members=np.array(records[0].model_set_ids), layers=np.array(records[0].layers),
        stage_fraction=np.array(stage.fraction), total_steps=np.array(records[0].total_steps),
    )
    run.manifest.add(f"metamers/{job}", npz)
    run.manifest.add(f"metamer_images/{job}", img_dir)
    trace = run.directory("traces") / f"{job}.csv"
    with open(trace, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["reference_id", "checkpoint", "loss"])
        for r in records:
            for i, v in enumerate(r.loss_trace):
                w.writerow([r.reference_id, i, _fmt(v)])
    run.manifest.add(f"traces/{job}", trace)


def load_records(run: Run, set_id: str, stage: StageSpec) -> list[MetamerRecord]:
    job = _job(set_id, stage.label)
    key = f"metamers/{job}"
    if key not in run.manifest.artifact_paths:
        raise RunError(f"no metamers for {set_id}/{stage.label}; run `generate` first")
    with np.load(run.manifest.path(key)) as z:
        members, layers, steps = z["members"].tolist(), z["layers"].tolist(), int(z["total_steps"])
        labels = run.label_map()
        return [MetamerRecord(str(rid), torch.from_numpy(m.copy()), members, stage, t.tolist(), steps,
                              label=labels.get(str(rid)), layers=layers)
                for rid, m, t in zip(z["ids"], z["metamers"], z["traces"])]


def run_generation(run: Run) -> None:
    for set_id in run.config.models.sets:
        for stage in run.stages():
            logger.info("generating %s at %s", set_id, stage.label)
            save_records(run, set_id, stage, generate_job(run, set_id, stage))
    run.manifest.save()


# ---------------------------------------------------------------------------
# evaluation


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, float) else v for v in row])
    return path


def run_recognizability(run: Run) -> None:
    detail, summary = [], []
    for set_id, members in run.config.models.sets.items():
        generators = run.zoo.order(members)
        for stage in run.stages():
            records = load_records(run, set_id, stage)
            results = recognizability(records, run.reference_map(), run.mapping, run.evaluators(), generators,
                                      labels=run.label_map(), model_set_id=set_id,
                                      exclude_other=run.config.evaluation.exclude_other)
            for r in results:
                detail.append([set_id, stage.label, f"{stage.fraction:g}", r.evaluator_model_id, r.accuracy,
                               r.accuracy_ground_truth, r.n, int(r.excluded)])
            mean, std, count = cross_model_mean(results)
            summary.append([set_id, stage.label, f"{stage.fraction:g}", mean, std, count])
    out = run.directory("analysis")
    run.manifest.add("recognizability", _write_rows(
        out / "recognizability.csv",
        ["model_set", "stage", "fraction", "evaluator", "accuracy", "accuracy_ground_truth", "n", "excluded"], detail))
    run.manifest.add("recognizability_summary", _write_rows(
        out / "recognizability_summary.csv", ["model_set", "stage", "fraction", "mean", "std", "n_evaluators"],
        summary))
    run.manifest.save()


def _embedders(run: Run):
    ev = run.config.evaluation
    handle = run.zoo[ev.embedder] if ev.embedder else list(run.zoo)[-1]
    layer = handle.layer(ev.embedder_layer) if ev.embedder_layer else resolve_stage(handle, StageSpec.named("late"))
    lp_layers = ev.lpips_layers or [l.name for l in handle.layers[:-1]]
    return (handle, layer), [layer_embedder(handle, name) for name in lp_layers]


def run_metrics(run: Run) -> None:
    ev = run.config.evaluation
    fid_embedder, lpips_embedders = _embedders(run)
    refs = run.reference_map()
    rows = []
    for set_id in run.config.models.sets:
        for stage in run.stages():
            records = load_records(run, set_id, stage)
            ref = torch.stack([refs[r.reference_id] for r in records])
            met = torch.stack([r.metamer for r in records])
            reports = evaluate_pairs(ref, met, ev.metrics, fid_embedder=fid_embedder, lpips_embedders=lpips_embedders)
            job = _job(set_id, stage.label)
            path = run.directory("metrics") / f"{job}.csv"
            write_metric_csv(path, [r.reference_id for r in records], reports)
            run.manifest.add(f"metrics/{job}", path)
            for name, rep in reports.items():
                mean, std = rep.summary() if rep.available else (float("nan"), float("nan"))
                rows.append([set_id, stage.label, name, rep.direction, int(rep.available), mean, std,
                             "; ".join(rep.flags)])
    run.manifest.add("metric_summary", _write_rows(
        run.directory("metrics") / "summary.csv",
        ["model_set", "stage", "metric", "direction", "available", "mean", "std", "flags"], rows))
    run.manifest.save()


def metrics_between_dirs(reference_dir: str | os.PathLike, metamer_dir: str | os.PathLike, out_csv: str | os.PathLike,
                         metrics: Sequence[str], image_size: Sequence[int] | None = None) -> dict:
    """Score image pairs matched by relative path across two directory trees."""
    from PIL import Image

    from .data import IMAGE_SUFFIXES, to_float_image

    ref_root, met_root = Path(reference_dir), Path(metamer_dir)
    rel = sorted(p.relative_to(ref_root).as_posix() for p in ref_root.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES)
    pairs = [r for r in rel if (met_root / r).exists()]
    if not pairs:
        raise RunError("no file names shared by the two directories")
    dropped = len(rel) - len(pairs)
    if dropped:
        logger.warning("%d reference images have no metamer counterpart", dropped)

    def load(path: Path) -> torch.Tensor:
        with Image.open(path) as img:
            size = tuple(image_size) if image_size else (3 if img.mode != "L" else 1, img.height, img.width)
            return to_float_image(img, size)

    ref = torch.stack([load(ref_root / r) for r in pairs])
    met = torch.stack([load(met_root / r) for r in pairs])
    reports = evaluate_pairs(ref, met, metrics)
    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    write_metric_csv(out_csv, pairs, reports)
    write_metric_directions(out_csv.with_name(out_csv.stem + "_summary.csv"), reports)
    return reports


def run_repsim(run: Run) -> None:
    ev_ids = run.config.evaluation.repsim_evaluators or [m.id for m in run.evaluators()]
    refs = run.reference_map()
    labelled, dist_rows = [], []
    dist_dir = run.directory("analysis") / "distributions"
    dist_dir.mkdir(exist_ok=True)
    for set_id, members in run.config.models.sets.items():
        for stage in run.stages():
            records = load_records(run, set_id, stage)
            ref = torch.stack([refs[r.reference_id] for r in records])
            met = torch.stack([r.metamer for r in records])
            for ev_id in ev_ids:
                handle = run.zoo[ev_id]
                layer = resolve_stage(handle, stage)
                a_ref = extract_activations(handle, layer, ref)
                a_met = extract_activations(handle, layer, met)
                for pairing in PAIRINGS:
                    rng = seeding.numpy_stream(run.seed, f"pairs/{set_id}/{stage.label}/{ev_id}/{pairing}")
                    label = DistributionLabel(set_id, ev_id, stage.label, pairing, tuple(members))
                    d = sample_pairs(a_ref, a_met, pairing, rng)
                    try:
                        dist = kde_density(d, pairing=pairing)
                    except ValueError as exc:
                        logger.warning("skipping %s: %s", label.name, exc)
                        continue
                    labelled.append((label, dist))
                    dist_rows.append([set_id, ev_id, stage.label, pairing, layer.name, d.size, dist.bandwidth,
                                      dist.median, int(dist.low_power)])
                    name = "__".join((set_id, ev_id, stage.label, pairing))
                    path = _write_rows(dist_dir / f"{name}.csv", ["distance", "density"],
                                       zip(dist.grid.tolist(), dist.density.tolist()))
                    run.manifest.add(f"distributions/{name}", path)
    out = run.directory("analysis")
    run.manifest.add("distribution_summary", _write_rows(
        out / "distributions.csv",
        ["model_set", "evaluator", "stage", "pairing", "layer", "n", "bandwidth", "median", "low_power"], dist_rows))
    if len(labelled) >= 2:
        hm = divergence_heatmap(labelled)
        names = [l.name for l in hm.labels]
        run.manifest.add("heatmap", _write_rows(
            out / "heatmap.csv", ["label"] + names, ([n] + hm.jsd[i].tolist() for i, n in enumerate(names))))
        run.manifest.add("heatmap_uninformative", _write_rows(
            out / "heatmap_uninformative.csv", ["label"] + names,
            ([n] + hm.uninformative[i].astype(int).tolist() for i, n in enumerate(names))))
    run.manifest.save()


def run_montecarlo(run: Run) -> None:
    ev = run.config.evaluation
    gen_cfg = run.config.generation_config(seeding.substream_seed(run.seed, "init/montecarlo"))
    runs = monte_carlo_model_sets(
        run.zoo, run.references.images, run.mapping, n_sets=ev.mc_n_sets, size_range=(ev.mc_size_min, ev.mc_size_max),
        steps=ev.mc_steps, stage=StageSpec.parse(ev.mc_stage), batch=ev.mc_batch,
        rng=seeding.numpy_stream(run.seed, "montecarlo"), config=gen_cfg, reference_ids=run.references.ids)
    out = run.directory("analysis")
    run.manifest.add("montecarlo_runs", _write_rows(
        out / "montecarlo_runs.csv", ["set_id", "size", "members", "recognizability_mean", "steps", "stage"],
        ([r.set_id, len(r.member_ids), ";".join(r.member_ids), r.recognizability_mean, r.steps, r.stage.label]
         for r in runs)))
    run.manifest.add("montecarlo_differences", _write_rows(
        out / "montecarlo_differences.csv", ["model", "appearances", "difference_in_means"],
        difference_table(runs, run.zoo.ids)))
    run.manifest.save()


def finish(run: Run) -> RunManifest:
    missing = run.manifest.missing_artifacts()
    if missing:
        raise RunError(f"artifacts missing on completion: {missing}")
    run.manifest.finished = _now()
    run.manifest.save()
    return run.manifest


def run_experiment(config: Config, out_root: str | os.PathLike = "runs", run_id: str | None = None,
                   reports: bool = True) -> RunManifest:
    """Generate for every (model set, stage), then run each enabled evaluation."""
    if config.deterministic:
        seeding.set_deterministic(True)
    run = prepare_run(config, out_root, run_id)
    run_generation(run)
    ev = config.evaluation
    if ev.recognizability:
        run_recognizability(run)
    if ev.metrics:
        run_metrics(run)
    if ev.repsim:
        run_repsim(run)
    if ev.montecarlo:
        run_montecarlo(run)
    if reports:
        from .reports import emit_reports

        emit_reports(run.manifest)
    return finish(run)
