"""Cloud-to-cloud distance labels and the retention filter.

The label of each scan point is the Euclidean distance to its nearest
reference point, in millimeters (internal geometry stays in meters; labels
and metric reports use mm). The direction matters: labels are computed from
the scan cloud against the reference, never the reverse.

The retention filter keeps points with a label strictly below the threshold
(default 80 mm); only retained points feed training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloudio import PointCloud, write_csv, read_csv
from .spatial import build_kdtree

DEFAULT_RETENTION_MM = 80.0

MM_PER_M = 1000.0


@dataclass(frozen=True)
class LabeledCloud:
    """Per-point labels: source indices, C2C distance (mm), retention mask."""

    indices: np.ndarray
    c2c_mm: np.ndarray
    retained: np.ndarray

    def __post_init__(self):
        if not (len(self.indices) == len(self.c2c_mm) == len(self.retained)):
            raise ValueError("labeled cloud arrays must have equal length")

    def __len__(self) -> int:
        return len(self.indices)

    def to_csv(self, path) -> None:
        write_csv(
            ["idx", "c2c_mm", "retained"],
            np.column_stack([
                self.indices.astype(np.float64),
                self.c2c_mm,
                self.retained.astype(np.float64),
            ]),
            path,
        )

    @classmethod
    def from_csv(cls, path) -> "LabeledCloud":
        headers, data = read_csv(path)
        if headers != ["idx", "c2c_mm", "retained"]:
            raise ValueError(f"{path}: expected header idx,c2c_mm,retained")
        return cls(data[:, 0].astype(np.int64), data[:, 1], data[:, 2] != 0.0)


def c2c_label(mls: PointCloud, reference: PointCloud, workers: int = 1) -> LabeledCloud:
    """Distance from every scan point to its nearest reference point, in mm.

    All points start retained; apply :func:`retention_filter` to threshold.
    """
    if len(mls) == 0:
        raise ValueError("scan cloud is empty")
    if len(reference) == 0:
        raise ValueError("reference cloud is empty")
    tree = build_kdtree(reference)
    _, dist = tree.nearest_batch(mls.xyz, workers=workers)
    return LabeledCloud(
        indices=np.arange(len(mls), dtype=np.int64),
        c2c_mm=dist * MM_PER_M,
        retained=np.ones(len(mls), dtype=bool),
    )


def retention_filter(labels: LabeledCloud, threshold_mm: float = DEFAULT_RETENTION_MM) -> LabeledCloud:
    """Mark points with label strictly below the threshold as retained."""
    if threshold_mm <= 0:
        raise ValueError(f"threshold_mm must be positive, got {threshold_mm}")
    return LabeledCloud(
        indices=labels.indices,
        c2c_mm=labels.c2c_mm,
        retained=labels.c2c_mm < threshold_mm,
    )
