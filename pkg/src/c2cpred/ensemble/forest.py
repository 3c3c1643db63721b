"""Bagged random-forest regressor."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict

import numpy as np

from ..rng import generator, substream_n
from .kernels import build_rf_tree
from .model import ForestModel, Tree


@dataclass(frozen=True)
class RfConfig:
    """Random-forest hyperparameters.

    Each tree fits a bootstrap sample (with replacement) of size
    ``max_samples * n`` and considers ``ceil(max_features * d)`` randomly
    drawn features per node. ``bootstrap=False`` fits every tree on the full
    sample once (interpolation regime for testing).
    """

    n_estimators: int = 100
    max_depth: int | None = 20
    max_samples: float = 0.5
    max_features: float = 1.0 / 3.0
    min_samples_leaf: int = 1
    bootstrap: bool = True
    seed: int = 0

    def validate(self) -> None:
        if self.n_estimators < 1:
            raise ValueError(f"n_estimators must be >= 1, got {self.n_estimators}")
        if not 0.0 < self.max_samples <= 1.0:
            raise ValueError(f"max_samples must be in (0, 1], got {self.max_samples}")
        if not 0.0 < self.max_features <= 1.0:
            raise ValueError(f"max_features must be in (0, 1], got {self.max_features}")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError(f"max_depth must be >= 1 or None, got {self.max_depth}")
        if self.min_samples_leaf < 1:
            raise ValueError(f"min_samples_leaf must be >= 1, got {self.min_samples_leaf}")


def train_rf(X: np.ndarray, y: np.ndarray, config: RfConfig = RfConfig(),
             columns=None, threads: int = 1) -> ForestModel:
    """Fit a bagged forest of exact-greedy variance-reduction trees.

    Deterministic for a given config seed, independent of thread count.
    """
    config.validate()
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("X must be a non-empty 2D array")
    if y.shape != (len(X),):
        raise ValueError(f"y length {y.shape} does not match X rows {len(X)}")
    if not np.isfinite(X).all():
        raise ValueError("X contains non-finite values")
    if not np.isfinite(y).all():
        raise ValueError("y contains non-finite values")

    n, d = X.shape
    columns = tuple(columns) if columns is not None else tuple(f"x{j}" for j in range(d))
    if len(columns) != d:
        raise ValueError(f"{len(columns)} column names for {d} columns")

    presort = np.empty((d, n), dtype=np.int32)
    for j in range(d):
        presort[j] = np.argsort(X[:, j], kind="stable")

    m = n if not config.bootstrap else max(1, int(round(config.max_samples * n)))
    max_depth = config.max_depth if config.max_depth is not None else 2**30
    cap = 2 * m + 1
    if max_depth < 31:
        cap = min(cap, 2 ** (max_depth + 1) - 1)
    n_feat_sub = max(1, math.ceil(config.max_features * d))

    trees: list[Tree | None] = [None] * config.n_estimators

    def fit_tree(t: int) -> None:
        if config.bootstrap:
            rng = generator(config.seed, "rf.bootstrap", t)
            draws = rng.integers(0, n, size=m)
            w = np.bincount(draws, minlength=n).astype(np.float64)
            # Restrict the presorted streams to sampled rows.
            keep = (w > 0.0)[presort]
            tree_presort = np.ascontiguousarray(presort[keep].reshape(d, -1))
        else:
            w = np.ones(n)
            tree_presort = presort
        node_feat = np.empty(cap, dtype=np.int32)
        node_thr = np.zeros(cap)
        node_left = np.zeros(cap, dtype=np.int32)
        node_right = np.zeros(cap, dtype=np.int32)
        node_value = np.zeros(cap)
        n_nodes = build_rf_tree(
            X, y, tree_presort, w, max_depth, n_feat_sub,
            float(config.min_samples_leaf),
            np.uint64(substream_n(config.seed, "rf.nodes", t)),
            node_feat, node_thr, node_left, node_right, node_value,
        )
        trees[t] = Tree(
            feature=node_feat[:n_nodes].copy(),
            threshold=node_thr[:n_nodes].copy(),
            left=node_left[:n_nodes].copy(),
            right=node_right[:n_nodes].copy(),
            value=node_value[:n_nodes].copy(),
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fit_tree, range(config.n_estimators)))
    else:
        for t in range(config.n_estimators):
            fit_tree(t)

    return ForestModel(
        kind="rf",
        trees=trees,  # type: ignore[arg-type]
        columns=columns,
        config={"rf": asdict(config), "n_train": n},
    )
