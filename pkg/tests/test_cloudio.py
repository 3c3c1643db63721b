"""I/O round trips and format error handling."""

import numpy as np
import pytest

from c2cpred.cloudio import (
    CloudFormatError,
    PointCloud,
    read_csv,
    read_ply,
    read_xyz,
    write_csv,
    write_ply,
    write_xyz,
)


def test_pointcloud_invariants():
    cloud = PointCloud(np.zeros((3, 3)), {"a": np.arange(3.0)})
    assert len(cloud) == 3
    with pytest.raises(ValueError):
        PointCloud(np.zeros((3, 3)), {"a": np.arange(2.0)})
    with pytest.raises(ValueError):
        PointCloud(np.zeros((3, 3)), {"": np.arange(3.0)})
    with pytest.raises(ValueError):
        PointCloud(np.zeros((3, 2)))


# -- XYZ ---------------------------------------------------------------------

def test_read_xyz_single_line(tmp_path):
    path = tmp_path / "a.xyz"
    path.write_text("1.0 2.0 3.0\n")
    cloud = read_xyz(path)
    assert len(cloud) == 1
    np.testing.assert_array_equal(cloud.xyz, [[1.0, 2.0, 3.0]])


def test_read_xyz_empty_file(tmp_path):
    path = tmp_path / "empty.xyz"
    path.write_text("")
    cloud = read_xyz(path)
    assert len(cloud) == 0
    assert cloud.scalars == {}


def test_read_xyz_malformed_token_names_line(tmp_path):
    path = tmp_path / "bad.xyz"
    path.write_text("1.0 2.0 abc\n")
    with pytest.raises(CloudFormatError, match="line 1"):
        read_xyz(path)


def test_read_xyz_rejects_nonfinite_coordinate(tmp_path):
    path = tmp_path / "nan.xyz"
    path.write_text("1.0 nan 3.0\n")
    with pytest.raises(CloudFormatError, match="line 1"):
        read_xyz(path)


def test_read_xyz_columns_header_and_comments(tmp_path):
    path = tmp_path / "c.xyz"
    path.write_text("# a comment\n# columns: c2c temp\n1 2 3 4.5 9\n2 3 4 5.5 8\n")
    cloud = read_xyz(path)
    assert list(cloud.scalars) == ["c2c", "temp"]
    np.testing.assert_array_equal(cloud.scalars["c2c"], [4.5, 5.5])


def test_read_xyz_unnamed_extras_and_ragged(tmp_path):
    path = tmp_path / "d.xyz"
    path.write_text("1 2 3 4\n5 6 7 8\n")
    cloud = read_xyz(path)
    assert list(cloud.scalars) == ["c0"]
    path.write_text("1 2 3 4\n5 6 7\n")
    with pytest.raises(CloudFormatError, match="line 2"):
        read_xyz(path)


def test_xyz_round_trip(tmp_path, rng):
    cloud = PointCloud(rng.standard_normal((50, 3)) * 100,
                       {"f": rng.random(50)})
    path = tmp_path / "rt.xyz"
    write_xyz(cloud, path)
    back = read_xyz(path)
    np.testing.assert_array_equal(back.xyz, cloud.xyz)
    np.testing.assert_array_equal(back.scalars["f"], cloud.scalars["f"])


# -- PLY ---------------------------------------------------------------------

def test_read_ply_ascii_two_vertices(tmp_path):
    path = tmp_path / "two.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 2\n"
        "property float x\nproperty float y\nproperty float z\n"
        "end_header\n0 0 0\n1 2 3\n")
    cloud = read_ply(path)
    assert len(cloud) == 2
    np.testing.assert_allclose(cloud.xyz[1], [1, 2, 3])


@pytest.mark.parametrize("fmt", ["ascii", "binary"])
def test_ply_round_trip_preserves_everything(tmp_path, rng, fmt):
    cloud = PointCloud(rng.standard_normal((80, 3)) * 1e3,
                       {"pred_c2c": rng.random(80), "w": rng.standard_normal(80)})
    path = tmp_path / "rt.ply"
    write_ply(cloud, path, format=fmt)
    back = read_ply(path)
    np.testing.assert_array_equal(back.xyz, cloud.xyz)
    assert list(back.scalars) == ["pred_c2c", "w"]
    for name in cloud.scalars:
        np.testing.assert_array_equal(back.scalars[name], cloud.scalars[name])


def test_ply_scalar_field_in_header(tmp_path):
    cloud = PointCloud(np.zeros((1, 3)), {"pred_c2c": np.array([7.0])})
    path = tmp_path / "f.ply"
    write_ply(cloud, path, format="ascii")
    header = path.read_bytes().split(b"end_header")[0].decode()
    assert "property double pred_c2c" in header
    assert read_ply(path).scalars["pred_c2c"][0] == 7.0


def test_ply_extra_property_becomes_scalar(tmp_path):
    path = tmp_path / "x.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 1\n"
        "property double x\nproperty double y\nproperty double z\n"
        "property double c2c\nend_header\n0 0 0 42.5\n")
    cloud = read_ply(path)
    assert cloud.scalars["c2c"][0] == 42.5


def test_ply_rejects_big_endian(tmp_path):
    path = tmp_path / "be.ply"
    path.write_text("ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n")
    with pytest.raises(CloudFormatError, match="binary_big_endian"):
        read_ply(path)


def test_ply_missing_coordinate_property(tmp_path):
    path = tmp_path / "noz.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 1\n"
        "property float x\nproperty float y\nend_header\n0 0\n")
    with pytest.raises(CloudFormatError, match="'z'"):
        read_ply(path)


def test_ply_truncated_binary_body(tmp_path):
    cloud = PointCloud(np.zeros((4, 3)))
    path = tmp_path / "trunc.ply"
    write_ply(cloud, path, format="binary")
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(CloudFormatError, match="truncated"):
        read_ply(path)


def test_ply_one_point_binary_round_trip(tmp_path):
    cloud = PointCloud(np.array([[0.1, -0.2, 1e-17]]))
    path = tmp_path / "one.ply"
    write_ply(cloud, path, format="binary")
    np.testing.assert_array_equal(read_ply(path).xyz, cloud.xyz)


def test_write_ply_unwritable_path(tmp_path):
    cloud = PointCloud(np.zeros((1, 3)))
    with pytest.raises(OSError):
        write_ply(cloud, tmp_path / "missing_dir" / "x.ply")


# -- CSV ---------------------------------------------------------------------

def test_write_csv_exact_bytes(tmp_path):
    path = tmp_path / "t.csv"
    write_csv(["a", "b"], [[1.0, 2.0]], path)
    assert path.read_text() == "a,b\n1,2\n"


def test_csv_value_round_trip(tmp_path):
    path = tmp_path / "rt.csv"
    values = np.array([[0.1, 1 / 3, 1e-300, 12345.678901234567]])
    write_csv(["a", "b", "c", "d"], values, path)
    _, back = read_csv(path)
    np.testing.assert_array_equal(back, values)


def test_write_csv_ragged_row(tmp_path):
    with pytest.raises(CloudFormatError, match="row 1"):
        write_csv(["a", "b"], [[1.0, 2.0], [3.0]], tmp_path / "r.csv")


def test_read_csv_errors(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1\n")
    with pytest.raises(CloudFormatError, match="line 2"):
        read_csv(path)
    path.write_text("a,b\n1,x\n")
    with pytest.raises(CloudFormatError, match="line 2"):
        read_csv(path)
