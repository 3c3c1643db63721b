"""Exactness of the k-NN index against brute force; raster aggregates."""

import numpy as np
import pytest

from c2cpred.cloudio import PointCloud
from c2cpred.spatial import build_kdtree, build_raster, knn, nearest
from conftest import brute_force_knn, random_cloud


def test_empty_cloud_rejected():
    with pytest.raises(ValueError):
        build_kdtree(PointCloud(np.empty((0, 3))))


def test_single_point_tree():
    tree = build_kdtree(PointCloud(np.array([[1.0, 2.0, 3.0]])))
    idx, dist = nearest(tree, [9.0, 9.0, 9.0])
    assert idx == 0
    assert dist == pytest.approx(np.sqrt(64 + 49 + 36))


def test_query_on_stored_point_is_distance_zero():
    pts = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
    tree = build_kdtree(PointCloud(pts))
    idx, dist = knn(tree, [1.0, 1.0, 1.0], 1)
    assert idx[0] == 1 and dist[0] == 0.0


def test_unit_square_tie_breaks_by_index():
    # corners; query at corner 0: the two distance-1 corners tie -> lower index
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float)
    tree = build_kdtree(PointCloud(pts))
    idx, dist = knn(tree, [0.0, 0.0, 0.0], 2)
    assert list(idx) == [0, 1]
    np.testing.assert_allclose(dist, [0.0, 1.0])
    idx3, _ = knn(tree, [0.0, 0.0, 0.0], 3)
    assert list(idx3) == [0, 1, 2]


def test_duplicate_points_both_retrievable():
    pts = np.array([[5, 5, 5], [5, 5, 5], [9, 9, 9]], dtype=float)
    tree = build_kdtree(PointCloud(pts))
    idx, dist = knn(tree, [5.0, 5.0, 5.0], 2)
    assert list(idx) == [0, 1]
    assert list(dist) == [0.0, 0.0]


def test_k_equals_n_returns_all_sorted():
    rng = np.random.default_rng(7)
    cloud = random_cloud(rng, 40)
    tree = build_kdtree(cloud)
    q = rng.random(3)
    idx, dist = knn(tree, q, 40)
    assert sorted(idx) == list(range(40))
    assert (np.diff(dist) >= 0).all()


def test_k_out_of_range():
    tree = build_kdtree(PointCloud(np.zeros((3, 3))))
    with pytest.raises(ValueError):
        knn(tree, [0, 0, 0], 0)
    with pytest.raises(ValueError):
        knn(tree, [0, 0, 0], 4)


def test_knn_matches_brute_force_random(rng):
    for trial in range(60):
        n = int(rng.integers(2, 300))
        cloud = random_cloud(rng, n, scale=10.0)
        tree = build_kdtree(cloud)
        for _ in range(5):
            q = rng.random(3) * 12 - 1
            k = int(rng.integers(1, n + 1))
            idx, dist = knn(tree, q, k)
            oidx, odist = brute_force_knn(cloud.xyz, q, k)
            assert set(idx) == set(oidx)
            np.testing.assert_allclose(dist, odist, rtol=1e-12, atol=1e-15)
            assert (np.diff(dist) >= 0).all()


def test_nearest_matches_brute_force_cross_cloud(rng):
    a = random_cloud(rng, 150)
    b = random_cloud(rng, 220)
    tree = build_kdtree(b)
    idx, dist = tree.nearest_batch(a.xyz)
    for i in range(len(a)):
        oidx, odist = brute_force_knn(b.xyz, a.xyz[i], 1)
        assert idx[i] == oidx[0]
        assert dist[i] == pytest.approx(odist[0], rel=1e-12)


def test_identical_clouds_zero_distance(rng):
    cloud = random_cloud(rng, 100)
    tree = build_kdtree(cloud)
    idx, dist = tree.nearest_batch(cloud.xyz)
    np.testing.assert_array_equal(dist, np.zeros(100))
    np.testing.assert_array_equal(idx, np.arange(100))


def test_two_points_five_mm():
    pts = np.array([[0, 0, 0], [0, 0, 0.005]])
    tree = build_kdtree(PointCloud(pts[:1]))
    _, dist = nearest(tree, pts[1])
    assert dist == pytest.approx(0.005)


# -- raster ------------------------------------------------------------------

def test_raster_three_points_one_cell():
    cloud = PointCloud(np.array([[0.1, 0.1, 0.0], [0.2, 0.2, 1.0], [0.3, 0.3, 2.0]]))
    raster = build_raster(cloud, 1.0)
    count, dz, std = raster.lookup(0.15, 0.15)
    assert count == 3
    assert dz == pytest.approx(2.0)
    assert std == pytest.approx(1.0, abs=1e-12)


def test_raster_single_point_cell():
    cloud = PointCloud(np.array([[0.0, 0.0, 5.0]]))
    raster = build_raster(cloud, 0.5)
    assert raster.lookup(0.0, 0.0) == (1.0, 0.0, 0.0)


def test_raster_boundary_floor_rule():
    # explicit origin at 0: a point exactly at x = 1.0 belongs to cell 1
    cloud = PointCloud(np.array([[0.5, 0.5, 0.0], [1.0, 0.5, 1.0], [1.5, 0.5, 3.0]]))
    raster = build_raster(cloud, 1.0, origin=(0.0, 0.0))
    ix, _ = raster.cell_of(1.0, 0.5)
    assert ix == 1
    count, dz, _ = raster.lookup(1.2, 0.5)
    assert count == 2 and dz == pytest.approx(2.0)


def test_raster_partition_and_locality(rng):
    cloud = random_cloud(rng, 500, scale=8.0)
    raster = build_raster(cloud, 0.9)
    assert raster.count.sum() == 500
    assert (raster.z_max >= raster.z_min).all()
    counts, dz, std = raster.lookup_batch(cloud.xyz[:, :2])
    assert (counts >= 1).all() and (dz >= 0).all() and (std >= 0).all()


def test_raster_cell_size_validation(rng):
    cloud = random_cloud(rng, 10)
    with pytest.raises(ValueError):
        build_raster(cloud, 0.0)
    with pytest.raises(ValueError):
        build_raster(cloud, -1.0)
