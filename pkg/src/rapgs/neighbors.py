"""Exact K-nearest-neighbor tables over primitive centers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InsufficientPointsError, ValidationError
from .parallel import chunk_slices, parallel_map

SIGMA_FLOOR = 1e-8

_ROW_CHUNK = 4096


@dataclass(frozen=True, eq=False)
class NeighborTable:
    """Neighbor indices and distances, ascending per row, self excluded.

    When the scene has no more than K points every row holds the other
    N-1 points followed by copies of the farthest one; ``degenerate`` is
    set and ``valid`` tells consumers how many leading columns are real.
    """

    indices: np.ndarray
    distances: np.ndarray
    degenerate: bool = False

    @property
    def k(self) -> int:
        return self.indices.shape[1]

    @property
    def valid(self) -> int:
        n = self.indices.shape[0]
        return min(self.k, n - 1) if self.degenerate else self.k

    def __len__(self) -> int:
        return self.indices.shape[0]


def pair_distances(points: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Euclidean distance between ``points[rows]`` and ``points[cols]`` (broadcasting)."""
    diff = points[cols] - points[rows]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def _resolve_ties(tree: cKDTree, pts: np.ndarray, i: int, radius: float, k: int):
    n = len(pts)
    near = np.asarray(tree.query_ball_point(pts[i], radius * (1.0 + 1e-12)), dtype=np.int64)
    if len(near) <= k:
        near = np.arange(n)
    d = pair_distances(pts, np.full(len(near), i), near)
    d[near == i] = np.inf
    o = np.lexsort((near, d))[:k]
    return near[o], d[o]


def _query_block(tree: cKDTree, pts: np.ndarray, rows: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    n = len(pts)
    q = min(k + 2, n)
    dist, cand = tree.query(pts[rows], k=q)
    dist = dist.reshape(len(rows), q)
    cand = cand.reshape(len(rows), q)
    # Drop self; if a row's self fell off the end (many exact duplicates), drop the last column.
    is_self = cand == rows[:, None]
    missing = ~is_self.any(axis=1)
    is_self[missing, -1] = True
    keep = ~is_self
    cand = cand[keep].reshape(len(rows), q - 1)
    dist = dist[keep].reshape(len(rows), q - 1)
    # Equal distances among the kept entries or across the k-th/(k+1)-th
    # boundary need the lower-index rule applied explicitly.
    tied = np.flatnonzero((np.diff(dist, axis=1) == 0).any(axis=1))
    cand = np.ascontiguousarray(cand[:, :k])
    dist = np.ascontiguousarray(dist[:, :k])
    for r in tied:
        cand[r], dist[r] = _resolve_ties(tree, pts, int(rows[r]), float(dist[r, -1]), k)
    return cand, dist


def build_knn(positions, k: int) -> NeighborTable:
    """Exact K-nearest neighbors of every point, excluding the point itself.

    Neighbors come from a median-split kd-tree query; rows containing equal
    distances are re-sorted so that ties resolve to the lower row index.
    """
    pts = np.ascontiguousarray(positions, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if k < 1:
        raise ValidationError(f"K must be >= 1, got {k}")
    if n < 2:
        raise InsufficientPointsError(f"need at least 2 points for a neighbor table, got {n}")
    k_eff = min(k, n - 1)
    tree = cKDTree(pts, balanced_tree=True, compact_nodes=True)
    blocks = parallel_map(
        lambda sl: _query_block(tree, pts, np.arange(sl.start, sl.stop), k_eff),
        chunk_slices(n, _ROW_CHUNK),
    )
    indices = np.concatenate([b[0] for b in blocks]).astype(np.int64)
    distances = np.concatenate([b[1] for b in blocks])
    degenerate = k_eff < k
    if degenerate:
        pad = k - k_eff
        indices = np.concatenate([indices, np.repeat(indices[:, -1:], pad, axis=1)], axis=1)
        distances = np.concatenate([distances, np.repeat(distances[:, -1:], pad, axis=1)], axis=1)
    return NeighborTable(indices=indices, distances=distances, degenerate=degenerate)


def avg_knn_distance(table: NeighborTable) -> np.ndarray:
    return table.distances[:, : table.valid].mean(axis=1)


def local_stats(values, table: NeighborTable) -> tuple[np.ndarray, np.ndarray]:
    """Mean and floored population std of ``values`` over each neighbor set.

    ``values`` may be (N,) or (N, F); statistics are taken per column.
    """
    v = np.asarray(values, dtype=np.float64)
    squeeze = v.ndim == 1
    if squeeze:
        v = v[:, None]
    if len(v) != len(table):
        raise ValidationError(f"values length {len(v)} != table rows {len(table)}")
    idx = table.indices[:, : table.valid]

    def block(sl):
        g = v[idx[sl]]  # (rows, K, F)
        mu = g.mean(axis=1)
        sd = np.sqrt(np.mean((g - mu[:, None, :]) ** 2, axis=1))
        return mu, sd

    parts = parallel_map(block, chunk_slices(len(v), _ROW_CHUNK))
    mu = np.concatenate([p[0] for p in parts]) if parts else np.zeros((0, v.shape[1]))
    sd = np.concatenate([p[1] for p in parts]) if parts else np.zeros((0, v.shape[1]))
    sd = np.maximum(sd, SIGMA_FLOOR)
    if squeeze:
        return mu[:, 0], sd[:, 0]
    return mu, sd
