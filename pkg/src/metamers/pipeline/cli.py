"""Command-line entry point: ``metamers <subcommand> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..image_metrics import ALL_METRICS
from . import experiment as ex
from . import seeding
from .config import ConfigError, load_config

logger = logging.getLogger("metamers")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="TOML config (defaults when omitted)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", type=Path, default=Path("runs"), help="output root (or run directory, see --run)")
    p.add_argument("--deterministic", action="store_true", help="force deterministic torch kernels")
    p.add_argument("-v", "--verbose", action="store_true")


def _run_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("--run", type=Path, default=None, help="existing run directory to work in")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metamers", description="multi-model metamer generation and evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="generate and evaluate everything the config enables")
    _common(p)
    p.add_argument("--run-id", default=None)

    p = sub.add_parser("generate", help="create a run directory and generate metamers")
    _common(p)
    p.add_argument("--run-id", default=None)

    for name, text in (("evaluate", "cross-model recognizability"), ("repsim", "representational similarity"),
                       ("report", "figures and report tables")):
        p = sub.add_parser(name, help=text)
        _common(p)
        _run_arg(p)

    p = sub.add_parser("metrics", help="image quality metrics for a run, or for two directories")
    _common(p)
    _run_arg(p)
    p.add_argument("--reference-dir", type=Path, default=None)
    p.add_argument("--metamer-dir", type=Path, default=None)
    p.add_argument("--metrics", default=",".join(m for m in ALL_METRICS if m not in ("fid", "lpips", "clip_iqa")),
                   help="comma separated metric names (directory mode)")

    p = sub.add_parser("montecarlo", help="Monte-Carlo study over random model sets")
    _common(p)
    _run_arg(p)
    p.add_argument("--run-id", default=None)

    p = sub.add_parser("train", help="train a preset desk zoo and write its manifest")
    _common(p)

    p = sub.add_parser("make-dataset", help="write the synthetic shape dataset as an image tree")
    _common(p)
    p.add_argument("--n-per-class", type=int, default=20)
    p.add_argument("--size", type=int, default=32)
    return parser


def _config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.deterministic:
        cfg.deterministic = True
    if cfg.deterministic:
        seeding.set_deterministic(True)
    return cfg


def _open(args) -> ex.Run:
    if args.run is None:
        raise ConfigError("--run DIR is required for this subcommand")
    return ex.open_run(args.run)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except (ConfigError, ex.RunError, ValueError, RuntimeError, FileNotFoundError) as exc:
        logger.error("%s", exc)
        return 2


def _dispatch(args) -> int:
    cmd = args.command
    if cmd == "make-dataset":
        from .data import synthetic_shapes, write_image_tree

        seed = args.seed if args.seed is not None else 0
        data = synthetic_shapes(args.n_per_class, size=args.size, seed=seed)
        write_image_tree(data, args.out)
        print(f"wrote {len(data)} images to {args.out}")
        return 0
    if cmd == "train":
        from .data import synthetic_shapes
        from .training import train_preset

        cfg = _config(args)
        m = cfg.models
        size = cfg.dataset.image_size[1]
        data = synthetic_shapes(m.train_per_class, size=size, seed=seeding.substream_seed(cfg.seed, "data/train"),
                                noise=cfg.dataset.noise)
        train_preset(m.preset, data, seed=cfg.seed, epochs=m.train_epochs, lr=m.train_lr, out_dir=args.out)
        print(f"wrote {args.out / 'manifest.csv'}")
        return 0
    if cmd == "run":
        manifest = ex.run_experiment(_config(args), args.out, run_id=args.run_id)
        print(manifest.run_dir)
        return 0
    if cmd == "generate":
        run = ex.prepare_run(_config(args), args.out, args.run_id)
        ex.run_generation(run)
        print(run.run_dir)
        return 0
    if cmd == "metrics" and args.reference_dir is not None:
        if args.metamer_dir is None:
            raise ConfigError("--metamer-dir is required with --reference-dir")
        names = [m.strip() for m in args.metrics.split(",") if m.strip()]
        target = args.out if args.out.suffix == ".csv" else args.out / "metrics.csv"
        ex.metrics_between_dirs(args.reference_dir, args.metamer_dir, target, names)
        print(target)
        return 0
    if cmd == "montecarlo" and args.run is None:
        cfg = _config(args)
        run = ex.prepare_run(cfg, args.out, args.run_id)
    else:
        if args.seed is not None or args.config is not None:
            logger.warning("--config/--seed are ignored for an existing run; its snapshot is used")
        if args.deterministic:
            seeding.set_deterministic(True)
        run = _open(args)
    if cmd == "evaluate":
        ex.run_recognizability(run)
    elif cmd == "metrics":
        ex.run_metrics(run)
    elif cmd == "repsim":
        ex.run_repsim(run)
    elif cmd == "montecarlo":
        ex.run_montecarlo(run)
    elif cmd == "report":
        from .reports import emit_reports

        emit_reports(run.manifest)
    ex.finish(run)
    print(run.run_dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
