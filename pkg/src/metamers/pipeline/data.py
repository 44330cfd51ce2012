"""Dataset ingestion and the synthetic shape dataset used by the desk harness."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from PIL import Image, ImageDraw

from ..model_zoo import ClassMapping

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".ppm"}
SHAPE_CLASSES = ("disk", "square", "triangle")


@dataclass
class LabeledImages:
    images: torch.Tensor
    labels: torch.Tensor
    ids: list[str]
    skipped: int = 0

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, indices: Sequence[int]) -> "LabeledImages":
        idx = list(indices)
        return LabeledImages(self.images[idx], self.labels[idx], [self.ids[i] for i in idx])


def to_float_image(img: Image.Image, size: tuple[int, int, int]) -> torch.Tensor:
    """Resize the short side, center-crop to ``size`` and scale to [0, 1] (channels first)."""
    c, h, w = size
    img = img.convert("RGB" if c == 3 else "L")
    scale = max(h / img.height, w / img.width)
    if scale != 1.0:
        new = (max(w, round(img.width * scale)), max(h, round(img.height * scale)))
        img = img.resize(new, Image.BICUBIC)
    left, top = (img.width - w) // 2, (img.height - h) // 2
    img = img.crop((left, top, left + w, top + h))
    arr = np.asarray(img, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return torch.from_numpy(arr.transpose(2, 0, 1).copy())


def ingest_dataset(root: str | os.PathLike, mapping: ClassMapping, image_size: tuple[int, int, int],
                   subset: Sequence[str] | None = None) -> LabeledImages:
    """Load a ``root/<class name>/<image>`` tree in lexicographic path order.

    Undecodable files are skipped with a warning and counted. ``subset`` keeps
    only the listed relative paths (``class/file``), in list order.
    """
    root = Path(root)
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise FileNotFoundError(f"no class directories under {root}")
    names = set(mapping.class_names)
    for d in class_dirs:
        if d.name not in names:
            raise ValueError(f"class directory {d.name!r} is absent from the class mapping")
    files = [f for d in class_dirs for f in sorted(d.iterdir()) if f.suffix.lower() in IMAGE_SUFFIXES]
    if subset is not None:
        by_rel = {f.relative_to(root).as_posix(): f for f in files}
        missing = [s for s in subset if s not in by_rel]
        if missing:
            raise FileNotFoundError(f"subset entries not found: {missing[:5]}")
        files = [by_rel[s] for s in subset]
    images, labels, ids, skipped = [], [], [], 0
    for f in files:
        try:
            with Image.open(f) as img:
                images.append(to_float_image(img, image_size))
        except (OSError, ValueError) as exc:
            logger.warning("skipping undecodable image %s: %s", f, exc)
            skipped += 1
            continue
        labels.append(mapping.index(f.parent.name))
        ids.append(f.relative_to(root).with_suffix("").as_posix())
    if not images:
        raise ValueError(f"no decodable images under {root}")
    return LabeledImages(torch.stack(images), torch.tensor(labels), ids, skipped)


def _draw_shape(draw: ImageDraw.ImageDraw, kind: str, cx: float, cy: float, r: float, angle: float, fill):
    if kind == "disk":
        draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=fill)
        return
    n = 4 if kind == "square" else 3
    if kind == "square":
        r = r * 0.9 * np.sqrt(2)
    pts = [(cx + r * np.cos(angle + 2 * np.pi * k / n), cy + r * np.sin(angle + 2 * np.pi * k / n)) for k in range(n)]
    draw.polygon(pts, fill=fill)


def synthetic_shapes(n_per_class: int, size: int = 32, seed: int = 0, noise: float = 0.06,
                     classes: Sequence[str] = SHAPE_CLASSES) -> LabeledImages:
    """Colored disks, squares and triangles on noisy backgrounds.

    Drawn at 4x resolution and downsampled, so edges are anti-aliased.
    """
    rng = np.random.default_rng(seed)
    ss = 4
    images, labels, ids = [], [], []
    for label, kind in enumerate(classes):
        for i in range(n_per_class):
            bg = rng.uniform(0.15, 0.85, size=3)
            fg = rng.uniform(0.0, 1.0, size=3)
            while np.abs(fg - bg).max() < 0.35:
                fg = rng.uniform(0.0, 1.0, size=3)
            canvas = Image.new("RGB", (size * ss, size * ss), tuple(int(v * 255) for v in bg))
            r = rng.uniform(0.22, 0.36) * size * ss
            cx, cy = rng.uniform(r, size * ss - r, size=2)
            _draw_shape(ImageDraw.Draw(canvas), kind, cx, cy, r, rng.uniform(0, 2 * np.pi),
                        tuple(int(v * 255) for v in fg))
            arr = np.asarray(canvas.resize((size, size), Image.BOX), dtype=np.float32) / 255.0
            arr = np.clip(arr + rng.normal(0.0, noise, size=arr.shape), 0.0, 1.0).astype(np.float32)
            images.append(torch.from_numpy(arr.transpose(2, 0, 1).copy()))
            labels.append(label)
            ids.append(f"{kind}/{kind}_{i:04d}")
    return LabeledImages(torch.stack(images), torch.tensor(labels), ids)


def save_image(image: torch.Tensor, path: str | os.PathLike) -> None:
    """Write a [0, 1] channels-first image as 8-bit PNG."""
    arr = (image.detach().cpu().clamp(0, 1).numpy().transpose(1, 2, 0) * 255.0).round().astype(np.uint8)
    if arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(arr).save(path, format="PNG")


def write_image_tree(data: LabeledImages, root: str | os.PathLike) -> None:
    root = Path(root)
    for img, rid in zip(data.images, data.ids):
        target = root / f"{rid}.png"
        target.parent.mkdir(parents=True, exist_ok=True)
        save_image(img, target)
