"""Training for the desk-scale model zoo."""
from __future__ import annotations

import logging
import os
from dataclasses import replace
from pathlib import Path

import torch
import torch.nn.functional as F

from ..model_zoo import ModelDescriptor, ModelHandle, ModelZoo
from .data import LabeledImages
from .seeding import substream_seed

logger = logging.getLogger(__name__)


def train_classifier(model: ModelHandle, images: torch.Tensor, labels: torch.Tensor, epochs: int = 20,
                     batch_size: int = 32, lr: float = 3e-3, weight_decay: float = 1e-4, seed: int = 0) -> float:
    """AdamW with a one-cycle schedule on cross-entropy; returns the final training accuracy."""
    gen = torch.Generator().manual_seed(seed)
    net = model.backend
    opt = torch.optim.AdamW(net.parameters(), lr=lr, weight_decay=weight_decay)
    n = images.shape[0]
    sched = torch.optim.lr_scheduler.OneCycleLR(opt, max_lr=lr, total_steps=epochs * -(-n // batch_size))
    for epoch in range(epochs):
        net.train()
        order = torch.randperm(n, generator=gen)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            xb = images[idx]
            flip = torch.rand(len(idx), generator=gen) < 0.5
            xb = torch.where(flip.view(-1, 1, 1, 1), xb.flip(-1), xb)
            loss = F.cross_entropy(net(xb), labels[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            total += loss.item() * len(idx)
        logger.info("%s epoch %d loss %.4f", model.id, epoch, total / n)
    net.eval()
    return accuracy(model, images, labels)


@torch.no_grad()
def accuracy(model: ModelHandle, images: torch.Tensor, labels: torch.Tensor, batch_size: int = 256) -> float:
    correct = 0
    for start in range(0, images.shape[0], batch_size):
        pred = model.logits(images[start:start + batch_size]).argmax(1)
        correct += int((pred == labels[start:start + batch_size]).sum())
    return correct / images.shape[0]


_CNN_A = ModelDescriptor("cnn_a", "tiny_cnn", arch_kwargs={"widths": [16, 32, 32, 64]})
_CNN_B = ModelDescriptor("cnn_b", "tiny_cnn", arch_kwargs={"widths": [24, 24, 48, 48], "kernel": 5})
_CNN_C = ModelDescriptor("cnn_c", "tiny_cnn", arch_kwargs={"widths": [16, 16, 32, 32]})
_CNN_D = ModelDescriptor("cnn_d", "tiny_cnn", arch_kwargs={"widths": [8, 16, 16, 32]})
_MLP_A = ModelDescriptor("mlp_a", "tiny_mlp", arch_kwargs={"widths": [256, 128, 64, 32]})

PRESETS: dict[str, tuple[ModelDescriptor, ...]] = {
    "desk": (_CNN_A, _CNN_B, _CNN_C),
    "desk5": (_CNN_A, _CNN_B, _CNN_C, _CNN_D, _MLP_A),
}


def preset_ids(preset: str) -> list[str]:
    if preset not in PRESETS:
        raise ValueError(f"unknown model preset {preset!r}; known: {sorted(PRESETS)}")
    return [d.id for d in PRESETS[preset]]


def train_preset(preset: str, data: LabeledImages, seed: int = 0, epochs: int = 20, lr: float = 3e-3,
                 out_dir: str | os.PathLike | None = None, num_classes: int = 3) -> ModelZoo:
    """Train every model of a preset zoo; with ``out_dir`` also write checkpoints and ``manifest.csv``."""
    preset_ids(preset)
    zoo = ModelZoo()
    for desc in PRESETS[preset]:
        desc = replace(desc, input_size=tuple(data.images.shape[1:]), num_classes=num_classes)
        handle = zoo.register_model(desc, seed=substream_seed(seed, f"training/init/{desc.id}"))
        acc = train_classifier(handle, data.images, data.labels, epochs=epochs, lr=lr,
                               seed=substream_seed(seed, f"training/batches/{desc.id}"))
        logger.info("trained %s: train accuracy %.3f", desc.id, acc)
    if out_dir is not None:
        zoo.save_checkpoints(out_dir)
        zoo.write_manifest(Path(out_dir) / "manifest.csv")
    return zoo
