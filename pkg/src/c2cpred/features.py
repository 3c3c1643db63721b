"""The 27-column geometric feature matrix.

Column order is frozen (and written into every feature CSV and model file;
prediction refuses mismatched orders):

1-8    linearity, planarity, scattering, omnivariance, anisotropy,
       eigenentropy, sum_EVs, change_of_curvature
9-16   Z_vals, radius_kNN, density, verticality, delta_Z_kNN, std_Z_kNN,
       radius_kNN_2D, density_2D
17-18  sum_EVs_2D, EV_ratio
19-21  frequency_acc_map, delta_z, std_z      (global XY raster, k-independent)
22-26  EV3D_1..3, EV2D_1..2
27     OptN

All k-dependent features are evaluated at the per-point optimal neighborhood
size. Densities are ``(k+1) / (4/3 pi r3D^3)`` (volumetric) and
``(k+1) / (pi r2D^2)`` (planar); when a radius collapses to zero (coincident
points) the density is replaced by the 99.9th percentile of the finite
densities of the same run, and the point is flagged degenerate.
"""

from __future__ import annotations

import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import neighborhood as nbh
from .cloudio import PointCloud, read_csv, write_csv
from .spatial import GridRaster2D, KdTree, build_kdtree, build_raster

FEATURE_NAMES: tuple[str, ...] = (
    "linearity", "planarity", "scattering", "omnivariance", "anisotropy",
    "eigenentropy", "sum_EVs", "change_of_curvature", "Z_vals", "radius_kNN",
    "density", "verticality", "delta_Z_kNN", "std_Z_kNN", "radius_kNN_2D",
    "density_2D", "sum_EVs_2D", "EV_ratio", "frequency_acc_map", "delta_z",
    "std_z", "EV3D_1", "EV3D_2", "EV3D_3", "EV2D_1", "EV2D_2", "OptN",
)

N_FEATURES = len(FEATURE_NAMES)

LABEL_COLUMN = "label_mm"

DENSITY_CAP_PERCENTILE = 99.9


@dataclass(frozen=True)
class FeatureConfig:
    """Tunables of the extraction pass."""

    k_min: int = 10
    k_max: int = 100
    k_step: int = 1
    cell_size: float = 0.25
    chunk_size: int = 8192
    threads: int = 1

    def validate(self) -> None:
        if self.k_min < 1 or self.k_min > self.k_max or self.k_step < 1:
            raise ValueError(f"invalid k range [{self.k_min}, {self.k_max}] step {self.k_step}")
        if self.cell_size <= 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")
        if self.chunk_size < 1 or self.threads < 1:
            raise ValueError("chunk_size and threads must be >= 1")


@dataclass
class FeatureMatrix:
    """n x 27 design matrix with per-row source point indices.

    ``y`` holds labels in millimeters when present; ``degenerate`` marks rows
    whose neighborhood needed the degenerate convention.
    """

    X: np.ndarray
    columns: tuple[str, ...]
    indices: np.ndarray
    y: np.ndarray | None = None
    degenerate: np.ndarray | None = None

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[1] != len(self.columns):
            raise ValueError(f"X shape {self.X.shape} does not match {len(self.columns)} columns")
        if len(self.indices) != len(self.X):
            raise ValueError("indices length mismatch")
        if self.y is not None and len(self.y) != len(self.X):
            raise ValueError("label length mismatch")

    def __len__(self) -> int:
        return len(self.X)

    def with_labels(self, y_mm: np.ndarray) -> "FeatureMatrix":
        y_mm = np.asarray(y_mm, dtype=np.float64)
        return FeatureMatrix(self.X, self.columns, self.indices, y_mm, self.degenerate)

    def to_csv(self, path) -> None:
        headers = ["idx", *self.columns]
        table = np.column_stack([self.indices.astype(np.float64), self.X])
        if self.y is not None:
            headers.append(LABEL_COLUMN)
            table = np.column_stack([table, self.y])
        write_csv(headers, table, path)

    @classmethod
    def from_csv(cls, path) -> "FeatureMatrix":
        headers, data = read_csv(path)
        if not headers or headers[0] != "idx":
            raise ValueError(f"{path}: first column must be 'idx'")
        has_label = headers[-1] == LABEL_COLUMN
        names = tuple(headers[1:-1] if has_label else headers[1:])
        if names != FEATURE_NAMES:
            raise ValueError(
                f"{path}: feature columns do not match the frozen order "
                f"(expected {len(FEATURE_NAMES)} columns starting "
                f"{FEATURE_NAMES[:3]}, got {names[:3]}...)"
            )
        X = data[:, 1:1 + len(names)]
        y = data[:, -1] if has_label else None
        return cls(X, names, data[:, 0].astype(np.int64), y)


# ---------------------------------------------------------------------------
# Per-point feature groups
# ---------------------------------------------------------------------------

def shape_features(stats: nbh.NeighborhoodStats) -> dict[str, float]:
    """Eigenvalue-shape descriptors (features 1-8, 17-18, 22-26)."""
    l1, l2, l3, m1, m2 = nbh.normalized_evs_or_default(stats)
    return {
        "linearity": (l1 - l2) / l1,
        "planarity": (l2 - l3) / l1,
        "scattering": l3 / l1,
        "omnivariance": (l1 * l2 * l3) ** (1.0 / 3.0),
        "anisotropy": (l1 - l3) / l1,
        "eigenentropy": nbh.eigenentropy(l1, l2, l3),
        "sum_EVs": float(stats.lam.sum()),
        "change_of_curvature": l3,
        "sum_EVs_2D": float(stats.mu.sum()),
        "EV_ratio": m2 / m1,
        "EV3D_1": l1,
        "EV3D_2": l2,
        "EV3D_3": l3,
        "EV2D_1": m1,
        "EV2D_2": m2,
    }


def height_density_features(stats: nbh.NeighborhoodStats, point, k: int,
                            density_cap: float = float("nan")) -> dict[str, float]:
    """Height, radius and density descriptors (features 9-16).

    ``density_cap`` substitutes for a zero-radius density; batch extraction
    passes the run percentile, see :data:`DENSITY_CAP_PERCENTILE`.
    """
    n = k + 1
    density = n / (4.0 / 3.0 * np.pi * stats.r3d**3) if stats.r3d > 0 else density_cap
    density_2d = n / (np.pi * stats.r2d**2) if stats.r2d > 0 else density_cap
    return {
        "Z_vals": float(point[2]),
        "radius_kNN": stats.r3d,
        "density": density,
        "verticality": 1.0 - float(stats.e1[2]),
        "delta_Z_kNN": stats.z_max - stats.z_min,
        "std_Z_kNN": stats.z_std,
        "radius_kNN_2D": stats.r2d,
        "density_2D": density_2d,
    }


def grid_features(raster: GridRaster2D, point) -> dict[str, float]:
    """Global-raster descriptors of the point's XY cell (features 19-21)."""
    count, dz, std = raster.lookup(float(point[0]), float(point[1]))
    return {"frequency_acc_map": count, "delta_z": dz, "std_z": std}


def feature_vector(stats: nbh.NeighborhoodStats, point, k: int,
                   raster: GridRaster2D, density_cap: float = float("nan")) -> np.ndarray:
    """Assemble one row in the frozen column order (OptN taken as k)."""
    values = shape_features(stats)
    values.update(height_density_features(stats, point, k, density_cap))
    values.update(grid_features(raster, point))
    values["OptN"] = float(k)
    return np.array([values[name] for name in FEATURE_NAMES])


# ---------------------------------------------------------------------------
# Batch extraction
# ---------------------------------------------------------------------------

def extract_features(cloud: PointCloud, config: FeatureConfig = FeatureConfig(),
                     progress: bool = False) -> FeatureMatrix:
    """One feature row per cloud point, deterministic for fixed input/config."""
    config.validate()
    n = len(cloud)
    if n < config.k_max + 1:
        raise ValueError(
            f"cloud has {n} points; k_max={config.k_max} requires at least {config.k_max + 1}"
        )
    cands = nbh.candidate_ks(config.k_min, config.k_max, config.k_step, n)
    tree = build_kdtree(cloud)
    raster = build_raster(cloud, config.cell_size)

    X = np.empty((n, N_FEATURES))
    degenerate = np.zeros(n, dtype=bool)
    starts = list(range(0, n, config.chunk_size))

    def run_chunk(start: int) -> None:
        stop = min(start + config.chunk_size, n)
        _extract_chunk(cloud.xyz, tree, raster, cands, config.k_max, start, stop, X, degenerate)
        if progress:
            print(f"  features: {stop}/{n} points", file=sys.stderr)

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            list(pool.map(run_chunk, starts))
    else:
        for start in starts:
            run_chunk(start)

    _apply_density_caps(X)
    return FeatureMatrix(X, FEATURE_NAMES, np.arange(n, dtype=np.int64),
                         degenerate=degenerate)


def _extract_chunk(xyz, tree: KdTree, raster, cands, k_max, start, stop, X, degenerate):
    queries = xyz[start:stop]
    idx, dist = tree.knn_batch(queries, k_max + 1)
    diff = xyz[idx] - queries[:, None, :]
    z_abs = xyz[idx, 2]

    optn, _ = nbh.batch_optimal_k(diff, cands)
    stats = nbh.batch_stats_at(diff, dist, z_abs, optn)

    lam = stats["lam"]
    mu = stats["mu"]
    trace3 = lam.sum(axis=1)
    trace2 = mu.sum(axis=1)
    ok3 = trace3 > 0.0
    ok2 = trace2 > 0.0
    l = np.where(ok3[:, None], lam / np.where(ok3, trace3, 1.0)[:, None],
                 np.array(nbh.DEGENERATE_L))
    m = np.where(ok2[:, None], mu / np.where(ok2, trace2, 1.0)[:, None],
                 np.array(nbh.DEGENERATE_M))
    l1, l2, l3 = l[:, 0], l[:, 1], l[:, 2]
    m1, m2 = m[:, 0], m[:, 1]

    r3d = stats["r3d"]
    r2d = stats["r2d"]
    n_nbrs = optn + 1.0
    with np.errstate(divide="ignore"):
        density = np.where(r3d > 0, n_nbrs / (4.0 / 3.0 * np.pi * r3d**3), np.nan)
        density_2d = np.where(r2d > 0, n_nbrs / (np.pi * r2d**2), np.nan)

    count, dz_cell, std_cell = raster.lookup_batch(queries[:, :2])

    cols = {
        "linearity": (l1 - l2) / l1,
        "planarity": (l2 - l3) / l1,
        "scattering": l3 / l1,
        "omnivariance": np.cbrt(l1 * l2 * l3),
        "anisotropy": (l1 - l3) / l1,
        "eigenentropy": nbh.eigenentropy(l1, l2, l3),
        "sum_EVs": trace3,
        "change_of_curvature": l3,
        "Z_vals": queries[:, 2],
        "radius_kNN": r3d,
        "density": density,
        "verticality": 1.0 - stats["eigvecs"][:, 2, 0],
        "delta_Z_kNN": stats["z_max"] - stats["z_min"],
        "std_Z_kNN": stats["z_std"],
        "radius_kNN_2D": r2d,
        "density_2D": density_2d,
        "sum_EVs_2D": trace2,
        "EV_ratio": m2 / m1,
        "frequency_acc_map": count,
        "delta_z": dz_cell,
        "std_z": std_cell,
        "EV3D_1": l1,
        "EV3D_2": l2,
        "EV3D_3": l3,
        "EV2D_1": m1,
        "EV2D_2": m2,
        "OptN": optn.astype(np.float64),
    }
    for j, name in enumerate(FEATURE_NAMES):
        X[start:stop, j] = cols[name]
    degenerate[start:stop] = ~ok3 | ~ok2 | (r3d <= 0.0) | (r2d <= 0.0)


def _apply_density_caps(X: np.ndarray) -> None:
    # Two-pass cap: zero-radius densities take the run's high percentile.
    for name in ("density", "density_2D"):
        col = X[:, FEATURE_NAMES.index(name)]
        missing = np.isnan(col)
        if missing.any():
            finite = col[~missing]
            cap = float(np.percentile(finite, DENSITY_CAP_PERCENTILE)) if len(finite) else 0.0
            col[missing] = cap
