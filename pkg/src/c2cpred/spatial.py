"""Exact k-NN queries and a global 2D raster accumulator.

The k-NN index is backed by a compiled kd-tree, with results re-ranked by a
canonical squared-distance computation so that ordering is exact and ties are
broken by ascending point index. Squared distances are used internally;
square roots are taken only at API boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .cloudio import PointCloud

_TIE_MARGIN = 4.0 * np.finfo(np.float64).eps


class KdTree:
    """Immutable exact k-NN index over the points of a source cloud.

    Queries return identical results to a brute-force scan, with ties at
    equal distance broken by ascending point index. Safe for concurrent
    read-only use.
    """

    def __init__(self, points: np.ndarray):
        points = np.ascontiguousarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3 or len(points) == 0:
            raise ValueError("KdTree requires a non-empty (n, 3) point array")
        self.points = points
        self.n = len(points)
        self._tree = cKDTree(points, balanced_tree=True, compact_nodes=True)

    # -- queries ------------------------------------------------------------

    def knn_batch(self, queries: np.ndarray, k: int, workers: int = 1):
        """k nearest neighbors for each query row.

        Returns ``(indices, distances)`` of shape (m, k), each row sorted by
        ascending distance with ties broken by ascending index.
        """
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        if not 1 <= k <= self.n:
            raise ValueError(f"k must be in [1, {self.n}], got {k}")

        # One spare neighbor detects ties that straddle the k-boundary.
        k_query = min(self.n, k + 1)
        _, idx = self._tree.query(queries, k=k_query, workers=workers)
        idx = idx.reshape(len(queries), k_query)

        d2 = self._sqdist(queries, idx)
        order = np.lexsort((idx, d2), axis=-1)
        rows = np.arange(len(queries))[:, None]
        idx = idx[rows, order]
        d2 = d2[rows, order]

        if k_query > k:
            gap = d2[:, k] - d2[:, k - 1]
            suspect = np.flatnonzero(gap <= _TIE_MARGIN * np.abs(d2[:, k]))
            for r in suspect:
                idx[r, :k], d2[r, :k] = self._brute_row(queries[r], k)
            idx = idx[:, :k]
            d2 = d2[:, :k]
        return idx, np.sqrt(d2)

    def knn(self, query, k: int):
        """k nearest neighbors of one query point: ``(indices, distances)``."""
        idx, dist = self.knn_batch(np.asarray(query, dtype=np.float64)[None, :], k)
        return idx[0], dist[0]

    def nearest(self, query):
        """Nearest point: ``(index, distance)``."""
        idx, dist = self.knn(query, 1)
        return int(idx[0]), float(dist[0])

    def nearest_batch(self, queries: np.ndarray, workers: int = 1):
        idx, dist = self.knn_batch(queries, 1, workers=workers)
        return idx[:, 0], dist[:, 0]

    # -- internals ----------------------------------------------------------

    def _sqdist(self, queries: np.ndarray, idx: np.ndarray) -> np.ndarray:
        diff = self.points[idx] - queries[:, None, :]
        return np.einsum("ijk,ijk->ij", diff, diff)

    def _brute_row(self, query: np.ndarray, k: int):
        diff = self.points - query
        d2 = np.einsum("ij,ij->i", diff, diff)
        order = np.lexsort((np.arange(self.n), d2))[:k]
        return order, d2[order]


def build_kdtree(cloud: PointCloud) -> KdTree:
    """Index all points of the cloud; deterministic for a given input order."""
    if len(cloud) == 0:
        raise ValueError("cannot build a KdTree over an empty cloud")
    return KdTree(cloud.xyz)


def knn(tree: KdTree, query, k: int):
    return tree.knn(query, k)


def nearest(tree: KdTree, query):
    return tree.nearest(query)


# ---------------------------------------------------------------------------
# 2D raster accumulator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridRaster2D:
    """Per-XY-cell aggregates: count, z range, sample std of z.

    A point belongs to cell ``(floor((x - x0)/s), floor((y - y0)/s))``; a
    point exactly on a boundary lands in the higher-index cell. Sample std
    uses divisor n-1 and is defined as 0 for single-point cells.
    """

    cell_size: float
    origin: tuple[float, float]
    cell_ix: np.ndarray       # sorted unique cells, parallel arrays
    cell_iy: np.ndarray
    count: np.ndarray
    z_min: np.ndarray
    z_max: np.ndarray
    z_std: np.ndarray

    def cell_of(self, x, y):
        ix = np.floor((np.asarray(x) - self.origin[0]) / self.cell_size).astype(np.int64)
        iy = np.floor((np.asarray(y) - self.origin[1]) / self.cell_size).astype(np.int64)
        return ix, iy

    def _locate(self, ix: np.ndarray, iy: np.ndarray) -> np.ndarray:
        pos = np.searchsorted(self._keys, _pack_cells(ix, iy))
        pos = np.minimum(pos, len(self._keys) - 1)
        hit = (self.cell_ix[pos] == ix) & (self.cell_iy[pos] == iy)
        if not hit.all():
            miss = np.flatnonzero(~hit)[0]
            raise KeyError(f"cell ({ix[miss]}, {iy[miss]}) is not occupied")
        return pos

    def lookup_batch(self, xy: np.ndarray):
        """(count, delta_z, std_z) for the cell of each XY row."""
        xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
        ix, iy = self.cell_of(xy[:, 0], xy[:, 1])
        pos = self._locate(ix, iy)
        return (
            self.count[pos].astype(np.float64),
            self.z_max[pos] - self.z_min[pos],
            self.z_std[pos],
        )

    def lookup(self, x: float, y: float):
        count, dz, std = self.lookup_batch(np.array([[x, y]]))
        return float(count[0]), float(dz[0]), float(std[0])

    @property
    def _keys(self) -> np.ndarray:
        return _pack_cells(self.cell_ix, self.cell_iy)


def _pack_cells(ix: np.ndarray, iy: np.ndarray) -> np.ndarray:
    # Cells are ordered like lexsort over (ix, iy); offset keeps signs sortable.
    return (ix.astype(np.int64) << np.int64(32)) + (iy.astype(np.int64) + (1 << 31))


def build_raster(cloud: PointCloud, cell_size: float, origin=None) -> GridRaster2D:
    """Accumulate per-cell count, z extremes and sample z-std."""
    if cell_size <= 0:
        raise ValueError(f"cell_size must be positive, got {cell_size}")
    if len(cloud) == 0:
        raise ValueError("cannot build a raster over an empty cloud")
    xyz = cloud.xyz
    if origin is None:
        origin = (float(xyz[:, 0].min()), float(xyz[:, 1].min()))

    ix = np.floor((xyz[:, 0] - origin[0]) / cell_size).astype(np.int64)
    iy = np.floor((xyz[:, 1] - origin[1]) / cell_size).astype(np.int64)
    span = max(abs(int(ix.min())), abs(int(ix.max())),
               abs(int(iy.min())), abs(int(iy.max())))
    if span >= (1 << 31):
        raise ValueError("raster extent too large for the configured cell size")

    keys = _pack_cells(ix, iy)
    # Within-cell z ascending: aggregates are independent of point order.
    order = np.lexsort((xyz[:, 2], keys))
    sorted_keys = keys[order]
    starts = np.flatnonzero(np.r_[True, sorted_keys[1:] != sorted_keys[:-1]])
    count = np.diff(np.r_[starts, len(sorted_keys)])

    z = xyz[:, 2][order]
    z_center = float(z.mean())
    zc = z - z_center
    z_min = np.minimum.reduceat(z, starts)
    z_max = np.maximum.reduceat(z, starts)
    s1 = np.add.reduceat(zc, starts)
    s2 = np.add.reduceat(zc * zc, starts)
    mean = s1 / count
    var = np.zeros(len(starts))
    multi = count > 1
    var[multi] = np.maximum(s2[multi] - count[multi] * mean[multi] ** 2, 0.0) / (count[multi] - 1)

    return GridRaster2D(
        cell_size=float(cell_size),
        origin=(float(origin[0]), float(origin[1])),
        cell_ix=ix[order][starts],
        cell_iy=iy[order][starts],
        count=count,
        z_min=z_min,
        z_max=z_max,
        z_std=np.sqrt(var),
    )
