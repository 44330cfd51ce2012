"""Desk-scale reference architectures.

Every network here is a :class:`BlockNet`: an ordered list of top-level blocks
whose last entry is the classification head. Depth is counted in blocks, so a
four-conv CNN has depth five (four conv blocks plus the head).
"""
from __future__ import annotations

from typing import Callable, Sequence

import torch
from torch import nn


class BlockNet(nn.Module):
    """Sequential block model with the input normalization folded in.

    Inputs are expected in ``[0, 1]``; ``mean``/``std`` are applied per channel
    before the first block.
    """

    def __init__(self, blocks: Sequence[nn.Module], mean: Sequence[float], std: Sequence[float],
                 names: Sequence[str] | None = None):
        super().__init__()
        if len(blocks) == 0:
            raise ValueError("a BlockNet needs at least one block")
        self.blocks = nn.ModuleList(blocks)
        self.block_names = list(names) if names is not None else [f"block{i}" for i in range(len(blocks))]
        if len(self.block_names) != len(self.blocks):
            raise ValueError("one name per block required")
        self.register_buffer("mean", torch.tensor(mean, dtype=torch.float32).view(1, -1, 1, 1))
        self.register_buffer("std", torch.tensor(std, dtype=torch.float32).view(1, -1, 1, 1))

    @property
    def depth(self) -> int:
        return len(self.blocks)

    def normalize(self, x: torch.Tensor) -> torch.Tensor:
        return (x - self.mean) / self.std

    def forward_to(self, x: torch.Tensor, index: int) -> torch.Tensor:
        """Run blocks ``0..index`` inclusive and return the raw block output."""
        h = self.normalize(x)
        for block in self.blocks[: index + 1]:
            h = block(h)
        return h

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.forward_to(x, self.depth - 1)


def _conv_block(c_in: int, c_out: int, kernel: int, pool: str | None, act: type[nn.Module],
                batch_norm: bool) -> nn.Sequential:
    layers: list[nn.Module] = [nn.Conv2d(c_in, c_out, kernel, padding=kernel // 2, bias=not batch_norm)]
    if batch_norm:
        layers.append(nn.BatchNorm2d(c_out))
    layers.append(act())
    if pool == "avg":
        layers.append(nn.AvgPool2d(2))
    elif pool == "max":
        layers.append(nn.MaxPool2d(2))
    return nn.Sequential(*layers)


_ACTIVATIONS: dict[str, type[nn.Module]] = {"relu": nn.ReLU, "elu": nn.ELU, "gelu": nn.GELU, "softplus": nn.Softplus}


def tiny_cnn(input_size=(3, 32, 32), num_classes=3, widths=(16, 32, 32, 64), kernel=3,
             activation="relu", pool="max", batch_norm=True, mean=(0.5, 0.5, 0.5),
             std=(0.25, 0.25, 0.25)) -> BlockNet:
    """Four conv blocks (the last three downsample by 2) and a pooled linear head.

    Batch norm runs in inference mode during generation, i.e. as a fixed affine map.
    """
    act = _ACTIVATIONS[activation]
    c = input_size[0]
    blocks: list[nn.Module] = []
    for i, w in enumerate(widths):
        blocks.append(_conv_block(c, w, kernel, pool if i > 0 else None, act, batch_norm))
        c = w
    blocks.append(nn.Sequential(nn.AdaptiveAvgPool2d(1), nn.Flatten(), nn.Linear(c, num_classes)))
    names = [f"conv{i + 1}" for i in range(len(widths))] + ["head"]
    return BlockNet(blocks, mean, std, names)


def tiny_mlp(input_size=(3, 32, 32), num_classes=3, widths=(256, 128, 64, 32), activation="relu",
             mean=(0.5, 0.5, 0.5), std=(0.25, 0.25, 0.25)) -> BlockNet:
    act = _ACTIVATIONS[activation]
    n_in = input_size[0] * input_size[1] * input_size[2]
    blocks: list[nn.Module] = []
    for i, w in enumerate(widths):
        head = [nn.Flatten()] if i == 0 else []
        blocks.append(nn.Sequential(*head, nn.Linear(n_in, w), act()))
        n_in = w
    blocks.append(nn.Linear(n_in, num_classes))
    names = [f"fc{i + 1}" for i in range(len(widths))] + ["head"]
    return BlockNet(blocks, mean, std, names)


def linear_probe(input_size=(1, 1, 4), num_classes=3, mean=None, std=None) -> BlockNet:
    """A single dense layer; its loss surface is used as a gradient oracle."""
    c = input_size[0]
    n_in = input_size[0] * input_size[1] * input_size[2]
    mean = mean if mean is not None else (0.0,) * c
    std = std if std is not None else (1.0,) * c
    return BlockNet([nn.Sequential(nn.Flatten(), nn.Linear(n_in, num_classes))], mean, std, ["dense"])


def identity_embedder(input_size=(1, 1, 2), num_classes=None, mean=None, std=None) -> BlockNet:
    """Passes the (normalized) input straight through; handy for metric oracles."""
    c = input_size[0]
    mean = mean if mean is not None else (0.0,) * c
    std = std if std is not None else (1.0,) * c
    return BlockNet([nn.Identity()], mean, std, ["identity"])


ARCHITECTURES: dict[str, tuple[str, Callable[..., BlockNet]]] = {
    "tiny_cnn": ("cnn", tiny_cnn),
    "tiny_mlp": ("mlp", tiny_mlp),
    "linear": ("other", linear_probe),
    "identity": ("other", identity_embedder),
}
