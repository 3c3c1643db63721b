"""Per-point covariance eigen-analysis and optimal neighborhood size.

A neighborhood of size parameter k consists of the query point plus its k
nearest neighbors (n = k + 1 points, ordered by 3D distance, ties by index).
Covariance is computed about the neighborhood mean with the unbiased n-1
divisor for n > 1, in a query-centered frame to avoid cancellation far from
the origin.

The optimal k per point minimizes the eigenentropy
``H(k) = -sum_i p_i ln p_i`` of the normalized 3D covariance eigenvalues over
a candidate range, ties broken by the smallest k. The scan fetches k_max + 1
neighbors once and evaluates every candidate from cumulative moments.

Degenerate neighborhoods (all points coincident, zero covariance trace) take
a fixed bounded convention instead of propagating NaN: normalized eigenvalues
(1/3, 1/3, 1/3) in 3D and (1/2, 1/2) in 2D, entropy ln 3, zero radii; they
are flagged so downstream consumers can tell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloudio import PointCloud
from .spatial import KdTree
from .symeig import eigvals2_sym, eigvals3_sym

LN3 = float(np.log(3.0))

DEGENERATE_L = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)
DEGENERATE_M = (0.5, 0.5)


class DegenerateNeighborhood(ValueError):
    """All neighborhood points coincide; normalized eigenvalues undefined."""


@dataclass(frozen=True)
class NeighborhoodStats:
    """Eigen-structure of one point's neighborhood.

    ``lam`` holds the 3D covariance eigenvalues sorted descending (m^2),
    ``eigvecs`` the matching unit eigenvectors as columns (sign-canonicalized
    so each z-component is >= 0; at exactly 0, the largest-magnitude
    component is made positive). ``mu`` holds the 2D (XY) eigenvalues.
    """

    lam: np.ndarray
    eigvecs: np.ndarray
    mu: np.ndarray
    n: int
    r3d: float
    r2d: float
    z_min: float
    z_max: float
    z_std: float
    degenerate: bool

    @property
    def e1(self) -> np.ndarray:
        return self.eigvecs[:, 0]

    @property
    def e2(self) -> np.ndarray:
        return self.eigvecs[:, 1]

    @property
    def e3(self) -> np.ndarray:
        return self.eigvecs[:, 2]


@dataclass(frozen=True)
class OptimalK:
    k: int
    entropy: float


def canonicalize_signs(vecs: np.ndarray) -> np.ndarray:
    """Flip eigenvector signs to the deterministic convention.

    vecs: (..., 3, n_vec) with eigenvectors in columns. Each column is
    flipped so its z-component is positive; where the z-component is exactly
    zero, the largest-magnitude component is made positive.
    """
    vecs = np.asarray(vecs, dtype=np.float64)
    z = vecs[..., 2, :]
    dominant = np.argmax(np.abs(vecs), axis=-2)
    dom_val = np.take_along_axis(vecs, dominant[..., None, :], axis=-2)[..., 0, :]
    ref = np.where(z != 0.0, z, dom_val)
    sign = np.where(ref < 0.0, -1.0, 1.0)
    return vecs * sign[..., None, :]


def eigenentropy(l1, l2, l3):
    """Shannon entropy of normalized eigenvalues, with 0 ln 0 = 0."""
    out = 0.0
    for p in (np.asarray(l1, dtype=np.float64),
              np.asarray(l2, dtype=np.float64),
              np.asarray(l3, dtype=np.float64)):
        safe = np.where(p > 0.0, p, 1.0)
        out = out - np.where(p > 0.0, p * np.log(safe), 0.0)
    return float(out) if np.ndim(out) == 0 else out


def normalized_evs(stats: NeighborhoodStats):
    """Normalized 3D and 2D eigenvalues (l1, l2, l3, m1, m2).

    Raises :class:`DegenerateNeighborhood` on zero covariance trace; callers
    substitute ``DEGENERATE_L`` / ``DEGENERATE_M``.
    """
    t3 = float(stats.lam.sum())
    t2 = float(stats.mu.sum())
    if t3 <= 0.0 or t2 <= 0.0:
        raise DegenerateNeighborhood("zero covariance trace: all neighbors coincident")
    l1, l2, l3 = (float(v / t3) for v in stats.lam)
    m1, m2 = (float(v / t2) for v in stats.mu)
    return l1, l2, l3, m1, m2


def normalized_evs_or_default(stats: NeighborhoodStats):
    try:
        return normalized_evs(stats)
    except DegenerateNeighborhood:
        return (*DEGENERATE_L, *DEGENERATE_M)


def eigen_stats(cloud: PointCloud, tree: KdTree, point_index: int, k: int) -> NeighborhoodStats:
    """Covariance eigen-structure of the k-NN neighborhood of one point."""
    n_pts = len(cloud)
    if not 1 <= k < n_pts:
        raise ValueError(f"k must be in [1, {n_pts - 1}], got {k}")
    query = cloud.xyz[point_index]
    idx, dist = tree.knn(query, k + 1)
    diff = cloud.xyz[idx] - query
    n = k + 1

    mean = diff.mean(axis=0)
    centered = diff - mean
    cov3 = centered.T @ centered / (n - 1)
    lam, vecs = np.linalg.eigh(cov3)
    lam = np.maximum(lam[::-1], 0.0)
    vecs = canonicalize_signs(vecs[:, ::-1])

    cov2 = centered[:, :2].T @ centered[:, :2] / (n - 1)
    mu1, mu2 = eigvals2_sym(cov2[0, 0], cov2[1, 1], cov2[0, 1])
    mu = np.maximum(np.array([mu1, mu2]), 0.0)

    r2d = float(np.sqrt((diff[:, :2] ** 2).sum(axis=1).max()))
    z = cloud.xyz[idx, 2]
    z_std = float(z.std(ddof=1)) if n > 1 else 0.0

    return NeighborhoodStats(
        lam=lam,
        eigvecs=vecs,
        mu=mu,
        n=n,
        r3d=float(dist[k]),
        r2d=r2d,
        z_min=float(z.min()),
        z_max=float(z.max()),
        z_std=z_std,
        degenerate=bool(lam.sum() <= 0.0),
    )


def candidate_ks(k_min: int, k_max: int, k_step: int, n_points: int) -> np.ndarray:
    if k_min < 1 or k_min > k_max or k_step < 1:
        raise ValueError(f"invalid k range [{k_min}, {k_max}] step {k_step}")
    if k_max > n_points - 1:
        raise ValueError(f"k_max={k_max} needs at least {k_max + 1} points, cloud has {n_points}")
    return np.arange(k_min, k_max + 1, k_step, dtype=np.int64)


def optimal_k(cloud: PointCloud, tree: KdTree, point_index: int,
              k_min: int = 10, k_max: int = 100, k_step: int = 1) -> OptimalK:
    """Entropy-minimizing neighbor count for one point."""
    cands = candidate_ks(k_min, k_max, k_step, len(cloud))
    query = cloud.xyz[point_index]
    idx, _ = tree.knn(query, k_max + 1)
    diff = cloud.xyz[idx] - query
    entropy = entropy_scan(diff[None, :, :], cands)[0]
    best = int(np.argmin(entropy))
    return OptimalK(k=int(cands[best]), entropy=float(entropy[best]))


# ---------------------------------------------------------------------------
# Vectorized batch machinery (shared with feature extraction)
# ---------------------------------------------------------------------------

def prefix_cov_entries(diff: np.ndarray):
    """Unbiased covariance entries of every neighbor prefix.

    diff: (m, K, 3) neighbor offsets from each query, in 3D-distance order.
    Returns six (m, K) arrays (cxx, cyy, czz, cxy, cxz, cyz); the n = 1
    prefix is all zeros.
    """
    x, y, z = diff[..., 0], diff[..., 1], diff[..., 2]
    ns = np.arange(1, diff.shape[1] + 1, dtype=np.float64)
    denom = np.maximum(ns - 1.0, 1.0)

    def cov(u, v):
        suv = np.cumsum(u * v, axis=1)
        mu = np.cumsum(u, axis=1) / ns
        mv = np.cumsum(v, axis=1) / ns
        return (suv - ns * mu * mv) / denom

    return cov(x, x), cov(y, y), cov(z, z), cov(x, y), cov(x, z), cov(y, z)


def entropy_scan(diff: np.ndarray, cands: np.ndarray) -> np.ndarray:
    """Eigenentropy H(k) for each candidate k, per query row.

    diff: (m, K, 3) with K >= max(cands) + 1. Returns (m, len(cands)).
    Degenerate prefixes evaluate to ln 3.
    """
    cxx, cyy, czz, cxy, cxz, cyz = prefix_cov_entries(diff)
    pos = np.asarray(cands, dtype=np.int64)  # prefix n = k + 1 lives at index k
    l1, l2, l3 = eigvals3_sym(
        cxx[:, pos], cyy[:, pos], czz[:, pos],
        cxy[:, pos], cxz[:, pos], cyz[:, pos],
    )
    l1 = np.maximum(l1, 0.0)
    l2 = np.maximum(l2, 0.0)
    l3 = np.maximum(l3, 0.0)
    trace = l1 + l2 + l3
    ok = trace > 0.0
    safe = np.where(ok, trace, 1.0)
    h = eigenentropy(l1 / safe, l2 / safe, l3 / safe)
    return np.where(ok, h, LN3)


def batch_optimal_k(diff: np.ndarray, cands: np.ndarray):
    """Entropy-minimizing candidate per row: (k, H(k)) arrays."""
    h = entropy_scan(diff, cands)
    best = np.argmin(h, axis=1)  # first minimum = smallest k on ties
    rows = np.arange(len(h))
    return np.asarray(cands)[best], h[rows, best]


def batch_stats_at(diff: np.ndarray, dist: np.ndarray, z_abs: np.ndarray, pos: np.ndarray):
    """Neighborhood statistics at a per-row prefix position.

    diff: (m, K, 3) query-centered offsets; dist: (m, K) 3D distances;
    z_abs: (m, K) absolute z of the neighbors; pos: (m,) chosen k per row.
    Returns a dict of per-row arrays matching :class:`NeighborhoodStats`.
    """
    m = diff.shape[0]
    rows = np.arange(m)
    cxx, cyy, czz, cxy, cxz, cyz = prefix_cov_entries(diff)
    at = (rows, pos)
    cov = np.empty((m, 3, 3))
    cov[:, 0, 0] = cxx[at]
    cov[:, 1, 1] = cyy[at]
    cov[:, 2, 2] = czz[at]
    cov[:, 0, 1] = cov[:, 1, 0] = cxy[at]
    cov[:, 0, 2] = cov[:, 2, 0] = cxz[at]
    cov[:, 1, 2] = cov[:, 2, 1] = cyz[at]

    lam, vecs = np.linalg.eigh(cov)
    lam = np.maximum(lam[:, ::-1], 0.0)
    vecs = canonicalize_signs(vecs[:, :, ::-1])

    mu1, mu2 = eigvals2_sym(cxx[at], cyy[at], cxy[at])
    mu = np.maximum(np.stack([mu1, mu2], axis=1), 0.0)

    r2d_run = np.maximum.accumulate(np.sqrt(diff[..., 0] ** 2 + diff[..., 1] ** 2), axis=1)
    ns = (pos + 1).astype(np.float64)
    z_mean = np.cumsum(z_abs - z_abs[:, :1], axis=1)[at] / ns
    z_sq = np.cumsum((z_abs - z_abs[:, :1]) ** 2, axis=1)[at]
    z_var = np.where(ns > 1, np.maximum(z_sq - ns * z_mean**2, 0.0) / np.maximum(ns - 1, 1), 0.0)

    return {
        "lam": lam,
        "eigvecs": vecs,
        "mu": mu,
        "n": pos + 1,
        "r3d": dist[at],
        "r2d": r2d_run[at],
        "z_min": np.minimum.accumulate(z_abs, axis=1)[at],
        "z_max": np.maximum.accumulate(z_abs, axis=1)[at],
        "z_std": np.sqrt(z_var),
        "degenerate": lam.sum(axis=1) <= 0.0,
    }
