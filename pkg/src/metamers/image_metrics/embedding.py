"""Embedding-based metrics: Fréchet distance / FID, LPIPS and CLIP-IQA.

Embedders are always injected. A layer embedder is a ``(ModelHandle, LayerRef)``
pair or any callable mapping a ``(N, C, H, W)`` batch to features.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np
import torch

from ..model_zoo import LayerRef, ModelHandle, layer_output

Embedder = Callable[[torch.Tensor], torch.Tensor]


@dataclass
class GaussianSummary:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=np.float64))
        if cov.shape != (self.mean.size, self.mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean dim {self.mean.size}")
        if not np.allclose(cov, cov.T, atol=1e-8):
            raise ValueError("covariance is not symmetric")
        self.covariance = (cov + cov.T) / 2.0

    @classmethod
    def fit(cls, samples) -> "GaussianSummary":
        """Sample mean and unbiased covariance of ``(N, D)`` samples."""
        x = np.asarray(samples, dtype=np.float64)
        if x.ndim != 2:
            x = x.reshape(x.shape[0], -1)
        if x.shape[0] < 2:
            raise ValueError("insufficient samples for covariance (need N >= 2)")
        return cls(x.mean(axis=0), np.cov(x, rowvar=False, ddof=1).reshape(x.shape[1], x.shape[1]))


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((mat + mat.T) / 2.0)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(g1: GaussianSummary, g2: GaussianSummary) -> float:
    """``||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2))``.

    The trace of ``(S1 S2)^(1/2)`` is taken from the eigenvalues of the
    symmetric matrix ``S1^(1/2) S2 S1^(1/2)``, which share the spectrum of
    ``S1 S2``; negative eigenvalues from round-off are clipped to zero.
    """
    if g1.mean.shape != g2.mean.shape:
        raise ValueError("Gaussians have different dimensions")
    diff = g1.mean - g2.mean
    root1 = _psd_sqrt(g1.covariance)
    inner = root1 @ g2.covariance @ root1
    eig = np.clip(np.linalg.eigvalsh((inner + inner.T) / 2.0), 0.0, None)
    value = diff @ diff + np.trace(g1.covariance) + np.trace(g2.covariance) - 2.0 * np.sqrt(eig).sum()
    return float(max(value, 0.0))


def layer_embedder(model: ModelHandle, layer: LayerRef | str | int) -> Embedder:
    if not isinstance(layer, LayerRef):
        layer = model.layer(layer)

    def embed(batch: torch.Tensor) -> torch.Tensor:
        return layer_output(model, layer, batch)

    embed.__name__ = f"{model.id}:{layer.name}"
    return embed


def _as_embedder(embedder) -> Embedder:
    if isinstance(embedder, tuple):
        return layer_embedder(*embedder)
    return embedder


def fid(reference_batch: torch.Tensor, metamer_batch: torch.Tensor, embedder) -> float:
    """Fréchet distance between Gaussians fitted to the two batches' embeddings."""
    embed = _as_embedder(embedder)
    with torch.no_grad():
        a = embed(reference_batch).reshape(reference_batch.shape[0], -1).double().numpy()
        b = embed(metamer_batch).reshape(metamer_batch.shape[0], -1).double().numpy()
    return frechet_distance(GaussianSummary.fit(a), GaussianSummary.fit(b))


def lpips(x: torch.Tensor, y: torch.Tensor, embedder: ModelHandle | Sequence[Embedder],
          layers: Sequence[LayerRef | str | int] | None = None, weights: Sequence[float] | None = None,
          eps: float = 1e-10) -> torch.Tensor:
    """Weighted sum over layers of spatially averaged squared distances between
    channel-normalized feature maps. Returns one value per image pair.

    ``x``/``y`` may be single images ``(C, H, W)`` or batches.
    """
    if isinstance(embedder, ModelHandle):
        if layers is None:
            raise ValueError("layers are required when passing a model handle")
        embeds = [layer_embedder(embedder, l) for l in layers]
    else:
        embeds = list(embedder)
    weights = [1.0] * len(embeds) if weights is None else list(weights)
    if len(weights) != len(embeds):
        raise ValueError("one weight per layer required")
    single = x.ndim == 3
    if single:
        x, y = x[None], y[None]
    total = torch.zeros(x.shape[0], dtype=torch.float64)
    with torch.no_grad():
        for embed, w in zip(embeds, weights):
            fx, fy = embed(x).double(), embed(y).double()
            if fx.ndim == 2:
                fx, fy = fx[:, :, None, None], fy[:, :, None, None]
            fx = fx / (fx.pow(2).sum(dim=1, keepdim=True).sqrt() + eps)
            fy = fy / (fy.pow(2).sum(dim=1, keepdim=True).sqrt() + eps)
            total += w * (fx - fy).pow(2).sum(dim=1).mean(dim=(1, 2))
    return total[0] if single else total


class ImageTextEmbedder(Protocol):
    def embed_image(self, image: torch.Tensor) -> torch.Tensor: ...

    def embed_text(self, text: str) -> torch.Tensor: ...


DEFAULT_PROMPT_PAIRS = (("Natural photo.", "Synthetic photo."), ("Bright photo.", "Dark photo."),
                        ("Good photo.", "Bad photo."))


def clip_iqa(image: torch.Tensor, prompt_pairs: Sequence[tuple[str, str]] = DEFAULT_PROMPT_PAIRS,
             embedder: ImageTextEmbedder | None = None, logit_scale: float = 100.0) -> list[float] | None:
    """Probability of the positive prompt for each pair; ``None`` without a provider.

    Cosine similarities are scaled by ``logit_scale`` and soft-maxed over the pair.
    """
    if embedder is None:
        return None
    img = torch.nn.functional.normalize(embedder.embed_image(image).double().flatten(), dim=0)
    scores = []
    for pos, neg in prompt_pairs:
        t = torch.stack([embedder.embed_text(pos).double().flatten(), embedder.embed_text(neg).double().flatten()])
        cos = torch.nn.functional.normalize(t, dim=1) @ img
        scores.append(float(torch.softmax(logit_scale * cos, dim=0)[0]))
    return scores
