"""Histogram-based gradient-boosted tree regressor with early stopping."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from ..rng import generator
from .kernels import build_gbdt_tree, predict_tree_binned
from .model import ForestModel, Tree

MAX_BINS = 256


@dataclass(frozen=True)
class GbdtConfig:
    """Gradient-boosting hyperparameters (squared-error objective).

    Features are pre-binned into quantile bins; each round subsamples rows,
    each tree subsamples columns, and splits maximize the l2-regularized
    gain. Training stops when validation RMSE has not improved for
    ``early_stopping_rounds`` rounds; prediction uses the rounds up to the
    validation optimum.
    """

    max_depth: int = 8
    eta: float = 0.05
    subsample: float = 0.8
    colsample_bytree: float = 0.8
    num_boost_round: int = 1000
    early_stopping_rounds: int = 50
    n_bins: int = 256
    l2_lambda: float = 1.0
    min_child_weight: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 < self.eta <= 1.0:
            raise ValueError(f"eta must be in (0, 1], got {self.eta}")
        if not 0.0 < self.subsample <= 1.0:
            raise ValueError(f"subsample must be in (0, 1], got {self.subsample}")
        if not 0.0 < self.colsample_bytree <= 1.0:
            raise ValueError(f"colsample_bytree must be in (0, 1], got {self.colsample_bytree}")
        if self.max_depth < 1:
            raise ValueError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.num_boost_round < 1:
            raise ValueError(f"num_boost_round must be >= 1, got {self.num_boost_round}")
        if self.early_stopping_rounds < 1:
            raise ValueError(f"early_stopping_rounds must be >= 1, got {self.early_stopping_rounds}")
        if not 2 <= self.n_bins <= MAX_BINS:
            raise ValueError(f"n_bins must be in [2, {MAX_BINS}], got {self.n_bins}")
        if self.l2_lambda < 0 or self.min_child_weight < 0:
            raise ValueError("l2_lambda and min_child_weight must be >= 0")


def quantile_bin_edges(X: np.ndarray, n_bins: int) -> list[np.ndarray]:
    """Per-column interior bin edges from quantiles (deduplicated)."""
    qs = np.linspace(0.0, 1.0, n_bins + 1)[1:-1]
    return [np.unique(np.quantile(X[:, j], qs)) for j in range(X.shape[1])]


def bin_columns(X: np.ndarray, edges: list[np.ndarray]) -> np.ndarray:
    """Column-major uint8 bins; bin(x) <= b exactly when x <= edges[b]."""
    out = np.empty((X.shape[1], X.shape[0]), dtype=np.uint8)
    for j, e in enumerate(edges):
        out[j] = np.searchsorted(e, X[:, j], side="left").astype(np.uint8)
    return out


def _validate_matrix(X, y, name):
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError(f"{name} X must be a non-empty 2D array")
    if y.shape != (len(X),):
        raise ValueError(f"{name} y length {y.shape} does not match X rows {len(X)}")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError(f"{name} data contains non-finite values")
    return X, y


def _rmse(pred: np.ndarray, y: np.ndarray) -> float:
    return float(np.sqrt(np.mean((pred - y) ** 2)))


def train_gbdt(X_train, y_train, X_val, y_val, config: GbdtConfig = GbdtConfig(),
               columns=None) -> ForestModel:
    """Boost histogram trees against held-out validation loss.

    The validation set drives early stopping only; it never contributes
    gradients. Deterministic for a given config seed.
    """
    config.validate()
    X_train, y_train = _validate_matrix(X_train, y_train, "train")
    X_val, y_val = _validate_matrix(X_val, y_val, "validation")
    n, d = X_train.shape
    if X_val.shape[1] != d:
        raise ValueError(f"validation X has {X_val.shape[1]} columns, train has {d}")
    columns = tuple(columns) if columns is not None else tuple(f"x{j}" for j in range(d))
    if len(columns) != d:
        raise ValueError(f"{len(columns)} column names for {d} columns")

    edges = quantile_bin_edges(X_train, config.n_bins)
    xbt_train = bin_columns(X_train, edges)
    xbt_val = bin_columns(X_val, edges)
    nbins_all = np.array([len(e) + 1 for e in edges], dtype=np.int32)

    base_score = float(np.mean(y_train))
    pred_train = np.full(n, base_score)
    pred_val = np.full(len(X_val), base_score)

    best_rmse = _rmse(pred_val, y_val)
    best_iter = -1
    d_sel = max(1, math.ceil(config.colsample_bytree * d))
    cap = 2 ** (config.max_depth + 1) - 1 if config.max_depth < 31 else 2 * n + 1
    cap = min(cap, 2 * n + 1)
    rng = generator(config.seed, "gbdt.rounds")
    trees: list[Tree] = []
    history: list[float] = []

    for t in range(config.num_boost_round):
        grad = pred_train - y_train
        mask = rng.random(n) < config.subsample
        rows = np.flatnonzero(mask).astype(np.int32)
        if len(rows) == 0:
            rows = np.arange(n, dtype=np.int32)
        if d_sel < d:
            sel = np.sort(rng.choice(d, size=d_sel, replace=False)).astype(np.int32)
        else:
            sel = np.arange(d, dtype=np.int32)

        node_feat = np.empty(cap, dtype=np.int32)
        node_bin = np.zeros(cap, dtype=np.int32)
        node_left = np.zeros(cap, dtype=np.int32)
        node_right = np.zeros(cap, dtype=np.int32)
        node_value = np.zeros(cap)
        n_nodes = build_gbdt_tree(
            xbt_train, grad, rows, sel, nbins_all[sel], config.max_depth,
            config.l2_lambda, config.min_child_weight,
            node_feat, node_bin, node_left, node_right, node_value,
        )
        feat = node_feat[:n_nodes].copy()
        bins = node_bin[:n_nodes].copy()
        left = node_left[:n_nodes].copy()
        right = node_right[:n_nodes].copy()
        value = node_value[:n_nodes].copy()

        predict_tree_binned(xbt_train, feat, bins, left, right, value,
                            config.eta, pred_train)
        predict_tree_binned(xbt_val, feat, bins, left, right, value,
                            config.eta, pred_val)

        threshold = np.zeros(n_nodes)
        internal = np.flatnonzero(feat != -1)
        for node in internal:
            threshold[node] = edges[feat[node]][bins[node]]
        trees.append(Tree(feature=feat, threshold=threshold, left=left,
                          right=right, value=value))

        val_rmse = _rmse(pred_val, y_val)
        history.append(val_rmse)
        if val_rmse < best_rmse:
            best_rmse = val_rmse
            best_iter = t
        if t - best_iter >= config.early_stopping_rounds:
            break

    return ForestModel(
        kind="gbdt",
        trees=trees,
        columns=columns,
        config={
            "gbdt": asdict(config),
            "n_train": n,
            "n_val": len(X_val),
            "rounds_run": len(trees),
            "best_val_rmse_mm": best_rmse,
        },
        base_score=base_score,
        learning_rate=config.eta,
        best_iteration=best_iter,
    )
