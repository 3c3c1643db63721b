"""C2C labeling against the brute-force oracle; retention semantics."""

import numpy as np
import pytest

from c2cpred.cloudio import PointCloud
from c2cpred.labeling import LabeledCloud, c2c_label, retention_filter
from conftest import brute_force_nearest_cloud, random_cloud


def test_identical_clouds_all_zero(rng):
    cloud = random_cloud(rng, 80)
    labels = c2c_label(cloud, cloud)
    np.testing.assert_array_equal(labels.c2c_mm, np.zeros(80))
    assert labels.retained.all()


def test_single_point_five_mm():
    mls = PointCloud(np.array([[0.0, 0.0, 0.005]]))
    ref = PointCloud(np.array([[0.0, 0.0, 0.0]]))
    labels = c2c_label(mls, ref)
    assert labels.c2c_mm[0] == pytest.approx(5.0, abs=1e-12)


def test_labels_match_brute_force(rng):
    mls = random_cloud(rng, 200, scale=4.0)
    ref = random_cloud(rng, 300, scale=4.0)
    labels = c2c_label(mls, ref)
    oracle_mm = brute_force_nearest_cloud(mls.xyz, ref.xyz) * 1000.0
    np.testing.assert_allclose(labels.c2c_mm, oracle_mm, atol=1e-9)


def test_direction_is_mls_to_reference(rng):
    # sparse scan inside a dense reference: scan->reference distances are
    # small, the reverse direction is much larger
    dense = random_cloud(rng, 1000, scale=2.0)
    sparse = PointCloud(rng.random((5, 3)) * 2.0)
    forward = c2c_label(sparse, dense).c2c_mm
    backward = c2c_label(dense, sparse).c2c_mm
    oracle_fw = brute_force_nearest_cloud(sparse.xyz, dense.xyz) * 1000.0
    np.testing.assert_allclose(forward, oracle_fw, atol=1e-9)
    assert backward.mean() > 3.0 * forward.mean()


def test_empty_inputs_rejected(rng):
    cloud = random_cloud(rng, 5)
    empty = PointCloud(np.empty((0, 3)))
    with pytest.raises(ValueError):
        c2c_label(empty, cloud)
    with pytest.raises(ValueError):
        c2c_label(cloud, empty)


def test_retention_strict_at_threshold():
    labels = LabeledCloud(
        indices=np.arange(4),
        c2c_mm=np.array([5.0, 79.999, 80.0, 120.0]),
        retained=np.ones(4, dtype=bool),
    )
    out = retention_filter(labels, 80.0)
    assert list(out.retained) == [True, True, False, False]


def test_retention_all_and_none():
    labels = LabeledCloud(np.arange(3), np.zeros(3), np.ones(3, dtype=bool))
    assert retention_filter(labels, 80.0).retained.all()
    assert retention_filter(labels, 1e9).retained.all()
    with pytest.raises(ValueError):
        retention_filter(labels, 0.0)


def test_retention_monotone_in_threshold(rng):
    labels = LabeledCloud(np.arange(500), rng.random(500) * 160,
                          np.ones(500, dtype=bool))
    low = retention_filter(labels, 40.0).retained
    high = retention_filter(labels, 90.0).retained
    assert (high | ~low).all()  # raising the threshold never drops a point


def test_label_csv_round_trip(tmp_path, rng):
    labels = retention_filter(LabeledCloud(
        np.arange(20), rng.random(20) * 100, np.ones(20, dtype=bool)), 80.0)
    path = tmp_path / "labels.csv"
    labels.to_csv(path)
    assert path.read_text().splitlines()[0] == "idx,c2c_mm,retained"
    back = LabeledCloud.from_csv(path)
    np.testing.assert_array_equal(back.indices, labels.indices)
    np.testing.assert_array_equal(back.c2c_mm, labels.c2c_mm)
    np.testing.assert_array_equal(back.retained, labels.retained)
