"""Forest model container, prediction, and the portable model file format.

A model is a sequence of axis-aligned decision trees stored as flat node
arrays (``feature, threshold, left, right, value``), where ``feature == -1``
marks a leaf and internal nodes route ``left iff x[feature] <= threshold``.

Bagged (RF) prediction is the mean over all trees. Boosted (GBDT) prediction
is ``base_score + learning_rate * sum(tree outputs)`` over trees
``[0, best_iteration]``; ``best_iteration == -1`` means base score only.

Model files are versioned JSON; reals use Python's shortest round-trip
representation (<= 17 significant digits), so a save/load cycle reproduces
bit-identical predictions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kernels import predict_tree

FORMAT_VERSION = 1


class ColumnMismatchError(ValueError):
    """Feature columns do not match what the model was trained on."""


class ModelFormatError(ValueError):
    """Model file violates the documented schema."""


@dataclass(frozen=True)
class Tree:
    """One decision tree as flat node arrays; node 0 is the root."""

    feature: np.ndarray   # int32, -1 = leaf
    threshold: np.ndarray  # float64
    left: np.ndarray      # int32
    right: np.ndarray     # int32
    value: np.ndarray     # float64

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        out = 0
        for node in range(self.n_nodes):
            if self.feature[node] != -1:
                for child in (self.left[node], self.right[node]):
                    depths[child] = depths[node] + 1
                    out = max(out, int(depths[child]))
        return out


@dataclass
class ForestModel:
    """A trained bagged or boosted forest plus training metadata."""

    kind: str                       # "rf" | "gbdt"
    trees: list[Tree]
    columns: tuple[str, ...]
    config: dict = field(default_factory=dict)
    base_score: float = 0.0
    learning_rate: float = 1.0
    best_iteration: int | None = None

    def check_columns(self, columns) -> None:
        columns = tuple(columns)
        if columns == self.columns:
            return
        if len(columns) != len(self.columns):
            raise ColumnMismatchError(
                f"model expects {len(self.columns)} feature columns, got {len(columns)}"
            )
        for got, want in zip(columns, self.columns):
            if got != want:
                raise ColumnMismatchError(f"feature column mismatch: got {got!r}, expected {want!r}")

    def active_trees(self) -> list[Tree]:
        if self.kind == "gbdt":
            stop = (self.best_iteration if self.best_iteration is not None
                    else len(self.trees) - 1)
            return self.trees[: stop + 1]
        return self.trees


def predict(model: ForestModel, X: np.ndarray, columns=None) -> np.ndarray:
    """Predicted target (mm) per row of X."""
    if columns is not None:
        model.check_columns(columns)
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(model.columns):
        raise ColumnMismatchError(
            f"X has {X.shape[1] if X.ndim == 2 else '?'} columns, "
            f"model expects {len(model.columns)}"
        )
    trees = model.active_trees()
    acc = np.zeros(len(X))
    for tree in trees:
        predict_tree(X, tree.feature, tree.threshold, tree.left, tree.right,
                     tree.value, acc)
    if model.kind == "rf":
        return acc / len(trees)
    return model.base_score + model.learning_rate * acc


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_model(model: ForestModel, path) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "columns": list(model.columns),
        "config": model.config,
        "base_score": model.base_score,
        "learning_rate": model.learning_rate,
        "best_iteration": model.best_iteration,
        "trees": [
            {
                "feature": tree.feature.tolist(),
                "threshold": tree.threshold.tolist(),
                "left": tree.left.tolist(),
                "right": tree.right.tolist(),
                "value": tree.value.tolist(),
            }
            for tree in model.trees
        ],
    }
    with open(Path(path), "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_model(path) -> ForestModel:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not valid model JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ModelFormatError(f"{path}: model file must hold a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported format_version {version!r}")
    kind = doc.get("kind")
    if kind not in ("rf", "gbdt"):
        raise ModelFormatError(f"{path}: unknown model kind {kind!r}")
    columns = doc.get("columns")
    if not isinstance(columns, list) or not all(isinstance(c, str) for c in columns):
        raise ModelFormatError(f"{path}: 'columns' must be a list of names")

    trees = []
    raw_trees = doc.get("trees")
    if not isinstance(raw_trees, list):
        raise ModelFormatError(f"{path}: 'trees' must be a list")
    for t, raw in enumerate(raw_trees):
        try:
            tree = Tree(
                feature=np.asarray(raw["feature"], dtype=np.int32),
                threshold=np.asarray(raw["threshold"], dtype=np.float64),
                left=np.asarray(raw["left"], dtype=np.int32),
                right=np.asarray(raw["right"], dtype=np.int32),
                value=np.asarray(raw["value"], dtype=np.float64),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"{path}: tree {t}: {exc}") from None
        n = tree.n_nodes
        if n == 0 or any(len(a) != n for a in (tree.threshold, tree.left, tree.right, tree.value)):
            raise ModelFormatError(f"{path}: tree {t}: inconsistent node array lengths")
        internal = tree.feature != -1
        kids = np.concatenate([tree.left[internal], tree.right[internal]])
        if len(kids) and (kids.min() < 0 or kids.max() >= n):
            raise ModelFormatError(f"{path}: tree {t}: child index out of range")
        if (tree.feature[internal] >= len(columns)).any():
            raise ModelFormatError(f"{path}: tree {t}: feature index out of range")
        trees.append(tree)

    best = doc.get("best_iteration")
    if best is not None and not isinstance(best, int):
        raise ModelFormatError(f"{path}: 'best_iteration' must be an integer or null")
    return ForestModel(
        kind=kind,
        trees=trees,
        columns=tuple(columns),
        config=doc.get("config", {}),
        base_score=float(doc.get("base_score", 0.0)),
        learning_rate=float(doc.get("learning_rate", 1.0)),
        best_iteration=best,
    )
