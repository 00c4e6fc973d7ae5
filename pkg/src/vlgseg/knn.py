"""Exact k-nearest-neighbour search on 3D points.

Both searches return an ``N x min(k, N)`` index array ordered by squared
distance, ties broken by the lower point index, and include the query point
itself.  Squared distances are computed with the same expression in both so
the neighbour sets match bit-for-bit.
"""

from __future__ import annotations

from collections import defaultdict

import numpy as np


def _sqdist(q: np.ndarray, x: np.ndarray) -> np.ndarray:
    dx = q[:, None, 0] - x[None, :, 0]
    dy = q[:, None, 1] - x[None, :, 1]
    dz = q[:, None, 2] - x[None, :, 2]
    return dx * dx + dy * dy + dz * dz


def brute_force_knn(xyz: np.ndarray, k: int, chunk: int = 256) -> np.ndarray:
    xyz = np.asarray(xyz, dtype=np.float64)
    n = len(xyz)
    k = min(k, n)
    out = np.empty((n, k), dtype=np.int64)
    for s in range(0, n, chunk):
        d2 = _sqdist(xyz[s : s + chunk], xyz)
        out[s : s + chunk] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def grid_knn(xyz: np.ndarray, k: int, cell_size: float | None = None) -> np.ndarray:
    """Uniform-grid search, expanding rings of cells until the result is provably exact."""
    xyz = np.asarray(xyz, dtype=np.float64)
    n = len(xyz)
    k = min(k, n)
    if n == 0:
        return np.empty((0, 0), dtype=np.int64)
    lo = xyz.min(axis=0)
    extent = np.maximum(xyz.max(axis=0) - lo, 1e-12)
    if cell_size is None:
        # aim for roughly k points per occupied cell on 2D-ish surfaces
        area = max(extent[0] * extent[1], extent[0] * extent[2], extent[1] * extent[2], 1e-12)
        cell_size = float(np.sqrt(area * max(k, 1) / n))
        cell_size = max(cell_size, float(extent.max()) / 1024.0)
    cells = np.floor((xyz - lo) / cell_size).astype(np.int64)
    buckets = defaultdict(list)
    for i, c in enumerate(map(tuple, cells)):
        buckets[c].append(i)
    buckets = {c: np.asarray(v, dtype=np.int64) for c, v in buckets.items()}

    out = np.empty((n, k), dtype=np.int64)
    offsets_cache = {}
    for cell, members in buckets.items():
        pending = members
        r = 0
        while pending.size:
            if r not in offsets_cache:
                rng = range(-r, r + 1)
                offsets_cache[r] = [(a, b, c) for a in rng for b in rng for c in rng]
            cand = [buckets[key] for key in
                    ((cell[0] + a, cell[1] + b, cell[2] + c) for a, b, c in offsets_cache[r])
                    if key in buckets]
            cand = np.sort(np.concatenate(cand))
            exhaustive = cand.size == n
            if cand.size >= k:
                d2 = _sqdist(xyz[pending], xyz[cand])
                order = np.argsort(d2, axis=1, kind="stable")[:, :k]
                kth = np.take_along_axis(d2, order[:, -1:], axis=1)[:, 0]
                done = np.ones(len(pending), dtype=bool) if exhaustive else kth < (r * cell_size) ** 2
                out[pending[done]] = cand[order[done]]
                pending = pending[~done]
            r += 1
    return out


def knn(xyz: np.ndarray, k: int, method: str = "grid") -> np.ndarray:
    if method == "grid":
        return grid_knn(xyz, k)
    if method == "brute":
        return brute_force_knn(xyz, k)
    raise ValueError(f"unknown knn method {method!r}")
