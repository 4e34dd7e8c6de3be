"""Seeded synthetic data: a mixture of low-rank Gaussian clusters.

Each cluster is a random ``m``-dimensional linear subspace through its
center plus small isotropic noise, scaled so every coordinate has unit
within-cluster standard deviation (``sigma = 1``). Centers are rescaled
until every pair sits at least ``6 * sigma`` apart. The low intrinsic
dimension keeps nearest-neighbor structure meaningful at high ``d``,
which a pure isotropic Gaussian would not.
"""

from __future__ import annotations

import numpy as np

from ..core import VectorDataset
from ..errors import UsageError

SIGMA = 1.0
MIN_SEPARATION = 6.0 * SIGMA
NOISE = 0.1


def _min_pairwise(centers: np.ndarray) -> float:
    if centers.shape[0] < 2:
        return np.inf
    sq = (centers**2).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * centers @ centers.T
    np.fill_diagonal(d2, np.inf)
    return float(np.sqrt(max(d2.min(), 0.0)))


def synth_dataset(n: int, d: int, clusters: int = 1, seed: int = 0, *, latent: int | None = None, noise: float = NOISE) -> VectorDataset:
    if n < 1 or d < 1 or clusters < 1:
        raise UsageError("n, d and clusters must all be at least 1")
    if not 0.0 <= noise < SIGMA:
        raise UsageError("noise must lie in [0, sigma)")
    m = min(d, 32) if latent is None else int(latent)
    if not 1 <= m <= d:
        raise UsageError("latent dimension must lie in [1, d]")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((clusters, d))
    sep = _min_pairwise(centers)
    if sep < MIN_SEPARATION:
        centers *= MIN_SEPARATION / max(sep, 1e-12)
    # unit-norm rows scaled so subspace variance + noise variance = sigma^2
    bases = rng.standard_normal((clusters, d, m))
    bases /= np.linalg.norm(bases, axis=2, keepdims=True)
    bases *= np.sqrt(SIGMA**2 - noise**2)
    labels = rng.integers(0, clusters, n)
    z = rng.standard_normal((n, m))
    x = np.empty((n, d), np.float64)
    for c in range(clusters):
        rows = np.flatnonzero(labels == c)
        if rows.size:
            x[rows] = centers[c] + z[rows] @ bases[c].T
    x += noise * rng.standard_normal((n, d))
    return VectorDataset(x.astype(np.float32))


def synth_split(n: int, n_queries: int, d: int, clusters: int, seed: int = 0) -> tuple[VectorDataset, np.ndarray]:
    """Base vectors and held-out queries drawn from one mixture."""
    full = synth_dataset(n + n_queries, d, clusters, seed)
    return VectorDataset(full.data[:n]), np.array(full.data[n:])
