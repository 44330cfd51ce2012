"""Representational similarity: pairwise activation distances, their densities
and Jensen-Shannon divergences between them."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PAIRINGS = ("reference_reference", "metamer_metamer", "reference_metamer")
GRID_POINTS = 1000
# below this many samples the density is reported but flagged
MIN_TRUSTED_SAMPLES = 80


@dataclass
class DistanceDistribution:
    pairing: str
    distances: np.ndarray
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float
    low_power: bool = False

    def integral(self) -> float:
        return float(np.trapezoid(self.density, self.grid))

    @property
    def median(self) -> float:
        return float(np.median(self.distances))


@dataclass(frozen=True)
class DistributionLabel:
    model_set_id: str
    evaluator_id: str
    stage: str
    pairing: str
    model_set_members: tuple[str, ...] = ()

    @property
    def name(self) -> str:
        return f"{self.model_set_id}|{self.evaluator_id}|{self.stage}|{self.pairing}"


@dataclass
class DivergenceCell:
    row: DistributionLabel
    col: DistributionLabel
    jsd: float
    uninformative: bool


@dataclass
class Heatmap:
    labels: list[DistributionLabel]
    jsd: np.ndarray
    uninformative: np.ndarray
    cells: list[list[DivergenceCell]] = field(repr=False, default_factory=list)


def _as_array(a) -> np.ndarray:
    vectors = getattr(a, "vectors", a)
    if hasattr(vectors, "detach"):
        vectors = vectors.detach().cpu().numpy()
    return np.asarray(vectors, dtype=np.float64).reshape(len(vectors), -1)


def sample_pairs(a, b, pairing: str, rng: np.random.Generator) -> np.ndarray:
    """Euclidean distances for one pairing mode.

    ``reference_metamer`` returns the ``N`` aligned distances between ``a`` and
    ``b``. The within-map modes (``a`` for references, ``b`` for metamers) draw
    ``N`` distinct unordered index pairs without replacement, or all of them
    when fewer than ``N`` exist.
    """
    if pairing not in PAIRINGS:
        raise ValueError(f"unknown pairing {pairing!r}")
    A, B = _as_array(a), _as_array(b)
    if pairing == "reference_metamer":
        if A.shape != B.shape:
            raise ValueError("reference_metamer pairing needs index-aligned maps of equal shape")
        if len(A) < 2:
            raise ValueError("need at least 2 samples")
        return np.linalg.norm(A - B, axis=1)
    X = A if pairing == "reference_reference" else B
    n = len(X)
    if n < 2:
        raise ValueError("need at least 2 samples")
    total = n * (n - 1) // 2
    picks = rng.choice(total, size=min(n, total), replace=False)
    rows, cols = np.triu_indices(n, k=1)
    i, j = rows[picks], cols[picks]
    return np.linalg.norm(X[i] - X[j], axis=1)


def scott_bandwidth(samples: np.ndarray) -> float:
    x = np.asarray(samples, dtype=np.float64)
    return float(x.std(ddof=1) * x.size ** (-1.0 / 5.0))


def gaussian_kde_eval(samples: np.ndarray, grid: np.ndarray, bandwidth: float) -> np.ndarray:
    z = (grid[:, None] - samples[None, :]) / bandwidth
    return np.exp(-0.5 * z * z).sum(axis=1) / (samples.size * bandwidth * math.sqrt(2.0 * math.pi))


def kde_density(distances, grid_points: int = GRID_POINTS, bandwidth: float | None = None,
                pairing: str = "reference_metamer") -> DistanceDistribution:
    """Gaussian KDE (Scott's rule unless ``bandwidth`` is given) on an even grid
    spanning ``[min - 3h, max + 3h]``."""
    d = np.asarray(distances, dtype=np.float64).ravel()
    if d.size < 2:
        raise ValueError("need at least 2 distances")
    if not np.isfinite(d).all():
        raise ValueError("non-finite distances")
    h = scott_bandwidth(d) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise ValueError("degenerate sample (zero bandwidth)")
    grid = np.linspace(d.min() - 3 * h, d.max() + 3 * h, grid_points)
    return DistanceDistribution(pairing, d, grid, gaussian_kde_eval(d, grid, h), h,
                                low_power=d.size <= MIN_TRUSTED_SAMPLES)


def _weights(grid: np.ndarray) -> np.ndarray:
    w = np.zeros_like(grid)
    dx = np.diff(grid)
    w[:-1] += dx / 2
    w[1:] += dx / 2
    return w


def jensen_shannon(p, q, grid=None) -> float:
    """Base-2 Jensen-Shannon divergence of two densities on one grid.

    Both densities are turned into probability masses with the grid's
    trapezoid weights (uniform weights when ``grid`` is omitted).
    """
    p, q = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("densities must share a grid")
    w = np.ones_like(p) if grid is None else _weights(np.asarray(grid, dtype=np.float64))
    P, Q = p * w, q * w
    if P.sum() <= 0 or Q.sum() <= 0:
        raise ValueError("density with zero mass")
    P, Q = P / P.sum(), Q / Q.sum()
    M = 0.5 * (P + Q)

    def kl(a):
        nz = a > 0
        return float(np.sum(a[nz] * np.log2(a[nz] / M[nz])))

    return float(min(max(0.5 * kl(P) + 0.5 * kl(Q), 0.0), 1.0))


def resample(dist: DistanceDistribution, grid: np.ndarray) -> np.ndarray:
    return np.interp(grid, dist.grid, dist.density, left=0.0, right=0.0)


def divergence_heatmap(distributions: Sequence[tuple[DistributionLabel, DistanceDistribution]],
                       grid_points: int = GRID_POINTS) -> Heatmap:
    """JSD for every pair of distributions after resampling onto the union span.

    Cell ``(i, j)`` is uninformative when row ``i``'s evaluator belongs to
    column ``j``'s model set.
    """
    labels = [lab for lab, _ in distributions]
    dists = [d for _, d in distributions]
    n = len(dists)
    jsd = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            lo = min(dists[i].grid[0], dists[j].grid[0])
            hi = max(dists[i].grid[-1], dists[j].grid[-1])
            grid = np.linspace(lo, hi, grid_points)
            jsd[i, j] = jsd[j, i] = jensen_shannon(resample(dists[i], grid), resample(dists[j], grid), grid)
    unin = np.array([[labels[i].evaluator_id in labels[j].model_set_members for j in range(n)] for i in range(n)],
                    dtype=bool).reshape(n, n)
    cells = [[DivergenceCell(labels[i], labels[j], float(jsd[i, j]), bool(unin[i, j])) for j in range(n)]
             for i in range(n)]
    return Heatmap(labels, jsd, unin, cells)
