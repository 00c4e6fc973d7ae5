"""Back-projection of per-pixel 2D embeddings onto points.

Each point gathers the embedding at its nearest pixel in every view that sees
it unoccluded; the fused embedding is the plain mean over those views.  Sums
are accumulated in float64 in view-index order and stored as float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import DEFAULT_TAU, passing_mask, pixel_index
from .scene import PointCloud


@dataclass(frozen=True)
class FusedEmbeddings:
    embeddings: np.ndarray  # N x d, float32
    valid: np.ndarray  # N bool
    view_counts: np.ndarray  # N int

    def __len__(self) -> int:
        return len(self.valid)

    @property
    def dim(self) -> int:
        return int(self.embeddings.shape[1])


def fuse(cloud: PointCloud, views, tau: float = DEFAULT_TAU) -> FusedEmbeddings:
    if not views:
        raise ValueError("fuse needs at least one view")
    dims = {v.dim for v in views}
    if len(dims) != 1:
        raise ValueError(f"views disagree on embedding dimension: {sorted(dims)}")
    d = dims.pop()
    n = len(cloud)
    acc = np.zeros((n, d), dtype=np.float64)
    counts = np.zeros(n, dtype=np.int64)
    for view in views:
        mask, u, v = passing_mask(cloud.xyz, view.camera, view.depth, tau)
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            continue
        acc[idx] += view.embedding[pixel_index(v[idx]), pixel_index(u[idx])]
        counts[idx] += 1
    valid = counts > 0
    out = np.zeros((n, d), dtype=np.float32)
    out[valid] = (acc[valid] / counts[valid, None]).astype(np.float32)
    return FusedEmbeddings(embeddings=out, valid=valid, view_counts=counts)


def fuse_stats(fused: FusedEmbeddings) -> dict:
    """Coverage report: fraction of valid points and a histogram of view counts."""
    n = len(fused)
    hist = np.bincount(fused.view_counts, minlength=1) if n else np.zeros(1, dtype=np.int64)
    return {
        "num_points": int(n),
        "num_valid": int(fused.valid.sum()),
        "coverage": float(fused.valid.mean()) if n else 0.0,
        "view_count_histogram": {str(i): int(c) for i, c in enumerate(hist)},
    }
