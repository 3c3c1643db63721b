"""Spatially blocked cross-validation, regression metrics, and importances.

Fold assignment blocks points by XY grid cell (``floor(x/g), floor(y/g)``)
so near-duplicate points never straddle a train/test split. The fold of a
cell is a deterministic 64-bit hash::

    fold = splitmix64(splitmix64(splitmix64(seed) ^ ix) ^ iy) mod n_folds

with ix, iy the cell indices reinterpreted as unsigned 64-bit integers.

Metrics: RMSE, MAE, MedAE (even-length median = mean of the two central
values), R^2 (flagged undefined when the targets have zero variance, never
silently 0), and P@m for m in {10, 20, 30, 40, 50} mm, the fraction of
points whose absolute error is <= m (inclusive). Labels and errors are in
millimeters throughout.

Aggregation over folds reports mean +/- half-width of the Student-t 95%
confidence interval (t_{0.975, n-1} * s / sqrt(n); 2.776 for 5 folds).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats as _scipy_stats

from .ensemble import ForestModel, GbdtConfig, RfConfig, predict, train_gbdt, train_rf
from .rng import generator, splitmix64, substream

P_AT_THRESHOLDS_MM = (10.0, 20.0, 30.0, 40.0, 50.0)

DEFAULT_GRID_SIZE_M = 3.0
DEFAULT_N_FOLDS = 5
VALIDATION_CELL_FRACTION = 0.1

METRIC_KEYS = ("rmse_mm", "mae_mm", "medae_mm", "r2",
               *(f"p_at_{int(m)}" for m in P_AT_THRESHOLDS_MM), "runtime_s")


@dataclass(frozen=True)
class FoldAssignment:
    """Per-point fold ids plus the blocking cells that produced them."""

    fold: np.ndarray      # int64 in [0, n_folds)
    cell_ix: np.ndarray
    cell_iy: np.ndarray
    n_folds: int
    grid_size: float
    seed: int

    def __len__(self) -> int:
        return len(self.fold)

    def cell_keys(self) -> np.ndarray:
        return _cell_key(self.cell_ix, self.cell_iy)


def _cell_key(ix: np.ndarray, iy: np.ndarray) -> np.ndarray:
    return (ix.astype(np.int64) << np.int64(32)) ^ (iy.astype(np.int64) & np.int64(0xFFFFFFFF))


def fold_hash(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    """The documented cell-to-hash mix (vectorized, uint64)."""
    h0 = splitmix64(np.uint64(seed))
    hx = splitmix64(h0 ^ np.ascontiguousarray(ix, dtype=np.int64).view(np.uint64))
    return splitmix64(hx ^ np.ascontiguousarray(iy, dtype=np.int64).view(np.uint64))


def assign_spatial_folds(xy: np.ndarray, grid_size_m: float = DEFAULT_GRID_SIZE_M,
                         n_folds: int = DEFAULT_N_FOLDS, seed: int = 0) -> FoldAssignment:
    """Assign every point to a fold by hashing its XY grid cell.

    ``xy`` is (n, >=2); extra columns (z) are ignored. All points of one
    cell share a fold. Raises when fewer cells are occupied than folds are
    requested (a silent degenerate CV would follow otherwise).
    """
    if grid_size_m <= 0:
        raise ValueError(f"grid_size_m must be positive, got {grid_size_m}")
    if n_folds < 2:
        raise ValueError(f"n_folds must be >= 2, got {n_folds}")
    xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
    ix = np.floor(xy[:, 0] / grid_size_m).astype(np.int64)
    iy = np.floor(xy[:, 1] / grid_size_m).astype(np.int64)
    n_cells = len(np.unique(_cell_key(ix, iy)))
    if n_cells < n_folds:
        raise ValueError(
            f"only {n_cells} occupied grid cells for {n_folds} folds; "
            f"use a smaller grid size or fewer folds"
        )
    fold = (fold_hash(ix, iy, seed) % np.uint64(n_folds)).astype(np.int64)
    return FoldAssignment(fold, ix, iy, n_folds, float(grid_size_m), int(seed))


def fold_cell_overlap(assignment: FoldAssignment) -> int:
    """Number of cells whose points land in more than one fold (always 0)."""
    keys = assignment.cell_keys()
    order = np.argsort(keys, kind="stable")
    keys_sorted = keys[order]
    folds_sorted = assignment.fold[order]
    same_cell = keys_sorted[1:] == keys_sorted[:-1]
    return int(np.count_nonzero(same_cell & (folds_sorted[1:] != folds_sorted[:-1])))


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricSet:
    """The five regression metrics of one evaluation, plus wall-clock."""

    rmse_mm: float
    mae_mm: float
    medae_mm: float
    r2: float                 # NaN when undefined
    r2_defined: bool
    p_at: dict[float, float]  # threshold mm -> fraction in [0, 1]
    n: int
    runtime_s: float = float("nan")

    def value(self, key: str) -> float:
        if key.startswith("p_at_"):
            return self.p_at[float(key[5:])]
        return getattr(self, key)


def metrics(y_mm: np.ndarray, pred_mm: np.ndarray) -> MetricSet:
    """Evaluate predictions against labels (both in millimeters)."""
    y = np.asarray(y_mm, dtype=np.float64)
    pred = np.asarray(pred_mm, dtype=np.float64)
    if y.shape != pred.shape or y.ndim != 1 or len(y) == 0:
        raise ValueError(f"need equal-length non-empty vectors, got {y.shape} and {pred.shape}")
    err = y - pred
    abs_err = np.abs(err)
    ss_res = float(np.sum(err**2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    if ss_tot == 0.0:
        r2, r2_defined = float("nan"), False
    else:
        r2, r2_defined = 1.0 - ss_res / ss_tot, True
    return MetricSet(
        rmse_mm=float(np.sqrt(np.mean(err**2))),
        mae_mm=float(np.mean(abs_err)),
        medae_mm=float(np.median(abs_err)),
        r2=r2,
        r2_defined=r2_defined,
        p_at={m: float(np.mean(abs_err <= m)) for m in P_AT_THRESHOLDS_MM},
        n=len(y),
    )


def confidence_interval(values) -> tuple[float, float]:
    """(mean, 95% CI half-width) from per-fold values, Student-t."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 2:
        raise ValueError("confidence interval needs at least 2 values")
    n = len(values)
    t = float(_scipy_stats.t.ppf(0.975, n - 1))
    s = float(np.std(values, ddof=1))
    return float(np.mean(values)), float(t * s / np.sqrt(n))


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    """Per-fold and aggregated metrics, optional permutation importances."""

    models: list[str]
    fold_metrics: dict[str, list[MetricSet]]
    aggregates: dict[str, dict[str, tuple[float, float]]]
    n_folds: int
    grid_size: float
    seed: int
    feature_names: tuple[str, ...] = ()
    permutation: dict[str, np.ndarray] = field(default_factory=dict)  # (n_feat, n_folds)


def _aggregate(per_fold: list[MetricSet]) -> dict[str, tuple[float, float]]:
    out = {}
    for key in METRIC_KEYS:
        values = [ms.value(key) for ms in per_fold]
        out[key] = confidence_interval(values)
    return out


def carve_validation_cells(train_mask: np.ndarray, assignment: FoldAssignment,
                           seed: int) -> np.ndarray:
    """Cell-level 10% carve of the training points for early stopping.

    Whole grid cells move to the validation side so the carve preserves the
    spatial blocking; the held-out test fold is never touched.
    """
    keys = assignment.cell_keys()
    train_cells = np.unique(keys[train_mask])
    if len(train_cells) < 2:
        raise ValueError("training folds cover fewer than 2 grid cells; cannot carve validation")
    n_val = max(1, int(round(VALIDATION_CELL_FRACTION * len(train_cells))))
    n_val = min(n_val, len(train_cells) - 1)
    rng = generator(seed, "cv.validation-cells")
    chosen = rng.choice(train_cells, size=n_val, replace=False)
    val_mask = train_mask & np.isin(keys, chosen)
    return val_mask


def cross_validate(X: np.ndarray, y_mm: np.ndarray, assignment: FoldAssignment,
                   rf_config: RfConfig | None = RfConfig(),
                   gbdt_config: GbdtConfig | None = GbdtConfig(),
                   columns=None, threads: int = 1,
                   importance_repeats: int = 0,
                   progress=None) -> EvalReport:
    """Train on four folds, test on the fifth, for every fold and model.

    ``rf_config``/``gbdt_config`` may be None to skip a model. With
    ``importance_repeats > 0``, permutation importance is computed on every
    held-out fold. Runtimes cover train + predict per fold.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y_mm, dtype=np.float64)
    if len(X) != len(y) or len(X) != len(assignment):
        raise ValueError("X, y and fold assignment must have equal length")
    models: dict[str, object] = {}
    if rf_config is not None:
        models["rf"] = rf_config
    if gbdt_config is not None:
        models["gbdt"] = gbdt_config
    if not models:
        raise ValueError("at least one model config is required")

    counts = np.bincount(assignment.fold, minlength=assignment.n_folds)
    if (counts == 0).any():
        empty = int(np.argmin(counts))
        raise ValueError(f"fold {empty} is empty after filtering")

    fold_metrics: dict[str, list[MetricSet]] = {name: [] for name in models}
    permutation: dict[str, list[np.ndarray]] = {name: [] for name in models}

    for f in range(assignment.n_folds):
        test = assignment.fold == f
        train = ~test
        for name, config in models.items():
            if name == "rf":
                t0 = time.perf_counter()
                model = train_rf(X[train], y[train], config, columns=columns,
                                 threads=threads)
                pred = predict(model, X[test])
                runtime = time.perf_counter() - t0
            else:
                val = carve_validation_cells(
                    train, assignment, substream(config.seed, f"cv.fold{f}"))
                inner = train & ~val
                if not inner.any() or not val.any():
                    raise ValueError(f"fold {f}: validation carve left no data")
                t0 = time.perf_counter()
                model = train_gbdt(X[inner], y[inner], X[val], y[val], config,
                                   columns=columns)
                pred = predict(model, X[test])
                runtime = time.perf_counter() - t0
            ms = replace(metrics(y[test], pred), runtime_s=runtime)
            fold_metrics[name].append(ms)
            if importance_repeats > 0:
                delta = permutation_importance(
                    model, X[test], y[test], repeats=importance_repeats,
                    seed=substream(assignment.seed, f"importance.fold{f}.{name}"))
                permutation[name].append(delta)
            if progress is not None:
                progress(f, name, ms)

    aggregates = {name: _aggregate(per_fold) for name, per_fold in fold_metrics.items()}
    return EvalReport(
        models=list(models),
        fold_metrics=fold_metrics,
        aggregates=aggregates,
        n_folds=assignment.n_folds,
        grid_size=assignment.grid_size,
        seed=assignment.seed,
        feature_names=tuple(columns) if columns is not None else (),
        permutation={name: np.column_stack(cols)
                     for name, cols in permutation.items() if cols},
    )


def permutation_importance(model: ForestModel, X_heldout: np.ndarray,
                           y_heldout_mm: np.ndarray, repeats: int = 1,
                           seed: int = 0) -> np.ndarray:
    """Increase in held-out RMSE when one feature column is shuffled.

    Returns one averaged delta-RMSE (mm) per feature column; columns the
    model never splits on come out exactly 0.
    """
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    X = np.ascontiguousarray(X_heldout, dtype=np.float64)
    y = np.asarray(y_heldout_mm, dtype=np.float64)
    if len(X) == 0 or len(X) != len(y):
        raise ValueError("held-out set must be non-empty and match label length")

    baseline = float(np.sqrt(np.mean((y - predict(model, X)) ** 2)))
    deltas = np.zeros(X.shape[1])
    shuffled = X.copy()
    for j in range(X.shape[1]):
        saved = shuffled[:, j].copy()
        acc = 0.0
        for r in range(repeats):
            rng = generator(seed, f"permute.col{j}", r)
            shuffled[:, j] = saved[rng.permutation(len(saved))]
            rmse = float(np.sqrt(np.mean((y - predict(model, shuffled)) ** 2)))
            acc += rmse - baseline
        deltas[j] = acc / repeats
        shuffled[:, j] = saved
    return deltas
