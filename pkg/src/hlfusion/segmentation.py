"""Ground removal, DBSCAN clustering and object-cluster selection."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import InvalidInput

NOISE = -1

DEFAULT_EPS = 0.5
DEFAULT_MIN_PTS = 10
DEFAULT_Z_THRESHOLD = 0.2


@dataclass(frozen=True)
class DbscanParams:
    eps: float = DEFAULT_EPS
    min_pts: int = DEFAULT_MIN_PTS

    def __post_init__(self):
        if not self.eps > 0:
            raise InvalidInput("eps must be positive")
        if self.min_pts < 1:
            raise InvalidInput("min_pts must be at least 1")


@dataclass
class Clustering:
    labels: np.ndarray
    n_clusters: int
    core: Optional[np.ndarray] = None

    def members(self, cluster_id: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cluster_id)


def remove_ground(points, z_threshold: float = DEFAULT_Z_THRESHOLD) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return np.flatnonzero(pts[:, 2] > z_threshold)


def _neighbor_pairs(pts: np.ndarray, eps: float):
    """All (i, j) with squared distance <= eps**2, found through a voxel grid of cell size eps."""
    eps2 = eps * eps
    cells = np.floor(pts / eps).astype(np.int64)
    buckets = defaultdict(list)
    for i, key in enumerate(map(tuple, cells)):
        buckets[key].append(i)
    buckets = {k: np.asarray(v) for k, v in buckets.items()}

    offsets = [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)]
    rows, cols = [], []
    for (cx, cy, cz), own in buckets.items():
        cand = [buckets[k] for k in ((cx + dx, cy + dy, cz + dz) for dx, dy, dz in offsets)
                if k in buckets]
        cand = np.concatenate(cand)
        d = pts[own][:, None, :] - pts[cand][None, :, :]
        d2 = d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]
        ii, jj = np.nonzero(d2 <= eps2)
        rows.append(own[ii])
        cols.append(cand[jj])
    return np.concatenate(rows), np.concatenate(cols)


def dbscan(points, params: DbscanParams = DbscanParams()) -> Clustering:
    """Deterministic DBSCAN with a closed eps-ball; a point counts as its own neighbor.

    Border points join the cluster of their lowest-index core neighbor.
    Cluster ids are ordered by each cluster's lowest member index.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    n = pts.shape[0]
    if n == 0:
        return Clustering(np.zeros(0, dtype=np.int64), 0, np.zeros(0, dtype=bool))
    if not np.all(np.isfinite(pts)):
        raise InvalidInput("non-finite coordinates")

    rows, cols = _neighbor_pairs(pts, params.eps)
    counts = np.bincount(rows, minlength=n)
    core = counts >= params.min_pts

    labels = np.full(n, NOISE, dtype=np.int64)
    if not core.any():
        return Clustering(labels, 0, core)

    both = core[rows] & core[cols]
    graph = coo_matrix((np.ones(both.sum(), dtype=np.int8), (rows[both], cols[both])), shape=(n, n))
    _, comp = connected_components(graph, directed=False)

    # border points: lowest-index core neighbor decides
    border_edge = ~core[rows] & core[cols]
    b_rows, b_cols = rows[border_edge], cols[border_edge]
    owner = np.full(n, n, dtype=np.int64)
    np.minimum.at(owner, b_rows, b_cols)

    raw = np.full(n, NOISE, dtype=np.int64)
    raw[core] = comp[core]
    has_owner = ~core & (owner < n)
    raw[has_owner] = comp[owner[has_owner]]

    # relabel by first appearance in index order
    mapping = {}
    for i in np.flatnonzero(raw != NOISE):
        mapping.setdefault(raw[i], len(mapping))
    assigned = raw != NOISE
    labels[assigned] = [mapping[r] for r in raw[assigned]]
    return Clustering(labels, len(mapping), core)


def select_object_cluster(c: Clustering, points) -> Optional[np.ndarray]:
    """Members of the largest cluster; ties go to the one nearer the sensor, then lower id."""
    if c.n_clusters == 0:
        return None
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    sizes = np.bincount(c.labels[c.labels >= 0], minlength=c.n_clusters)
    best_key, best = None, None
    for cid in range(c.n_clusters):
        idx = np.flatnonzero(c.labels == cid)
        centroid = pts[idx].mean(axis=0)
        key = (-int(sizes[cid]), math.hypot(centroid[0], centroid[1]), cid)
        if best_key is None or key < best_key:
            best_key, best = key, idx
    return best
