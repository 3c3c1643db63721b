"""Shared fixtures, brute-force oracles, and the acceptance summary hook."""

from __future__ import annotations

import numpy as np
import pytest

from c2cpred.cloudio import PointCloud

# ---------------------------------------------------------------------------
# Independent oracles (deliberately naive; never reuse library internals)
# ---------------------------------------------------------------------------

def brute_force_knn(points: np.ndarray, query: np.ndarray, k: int):
    """O(n) scan: indices and distances sorted by (distance, index)."""
    d2 = ((points - query) ** 2).sum(axis=1)
    order = np.lexsort((np.arange(len(points)), d2))[:k]
    return order, np.sqrt(d2[order])


def brute_force_nearest_cloud(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """O(n*m) distances from each row of a to its nearest row of b."""
    out = np.empty(len(a))
    for i, p in enumerate(a):
        out[i] = np.sqrt(((b - p) ** 2).sum(axis=1).min())
    return out


def covariance_eigensolve(points: np.ndarray):
    """Dense unbiased covariance + LAPACK eigensolve, descending order."""
    centered = points - points.mean(axis=0)
    cov = centered.T @ centered / (len(points) - 1)
    lam, vecs = np.linalg.eigh(cov)
    return lam[::-1], vecs[:, ::-1]


def random_cloud(rng: np.random.Generator, n: int, scale: float = 1.0) -> PointCloud:
    return PointCloud(rng.random((n, 3)) * scale)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


# ---------------------------------------------------------------------------
# Acceptance-criteria summary
# ---------------------------------------------------------------------------

ACCEPTANCE_RESULTS: list[tuple[int, str, bool, str]] = []


def record_criterion(number: int, title: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE_RESULTS.append((number, title, ok, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if ok else "FAIL"
        line = f"criterion {number:2d} [{status}] {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)
