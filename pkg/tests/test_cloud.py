import numpy as np
import pytest

from betaflow.cloud import (
    InputError,
    PointCloud,
    ingest,
    read_binary,
    read_csv,
    write_binary,
    write_csv,
)


def test_rejects_empty_and_nonfinite():
    with pytest.raises(InputError):
        PointCloud(np.zeros((0, 2)), d=1)
    with pytest.raises(InputError, match="row 1"):
        PointCloud(np.array([[0.0, 0.0], [np.nan, 0.0]]), d=1)


def test_rejects_points_outside_ball():
    with pytest.raises(InputError):
        PointCloud(np.array([[2.0, 0.0]]), d=1)


def test_normalized_brings_into_ball():
    rng = np.random.default_rng(0)
    pts = rng.uniform(5.0, 9.0, size=(100, 2))
    cloud = PointCloud.normalized(pts, d=1)
    assert np.linalg.norm(cloud.points, axis=1).max() <= 1.0
    back = cloud.to_original(cloud.points)
    assert np.abs(back - pts).max() < 1e-12


def test_normalized_weight_scaling():
    # unit-interval sample with H^1 weights: mass ratio should survive rescaling
    n = 1001
    pts = np.column_stack([np.linspace(0, 1, n), np.zeros(n)])
    w = np.full(n, 1.0 / n)
    cloud = PointCloud.normalized(pts, d=1, weights=w)
    center, scale = cloud.transform
    # total mass scales like 1/scale: length of the rescaled segment
    assert abs(cloud.weights.sum() - 1.0 / scale) < 1e-9


def test_weight_validation():
    pts = np.array([[0.0, 0.0], [0.5, 0.0]])
    with pytest.raises(InputError):
        PointCloud(pts, d=1, weights=np.array([1.0, -1.0]))
    with pytest.raises(InputError):
        PointCloud(pts, d=1, weights=np.array([1.0]))


def test_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    pts = rng.uniform(-0.5, 0.5, size=(50, 3))
    w = rng.uniform(0.5, 1.5, size=50)
    cloud = PointCloud(pts, d=2, weights=w)
    path = tmp_path / "cloud.csv"
    write_csv(path, cloud)
    back = read_csv(path)
    assert back.d == 2 and back.n == 3
    assert np.abs(back.points - pts).max() < 1e-15
    assert np.abs(back.weights - w).max() < 1e-15


def test_csv_rejects_nan_with_row_number(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("# n=2 d=1 weighted=0\n0.1,0.2\nnan,0.3\n")
    with pytest.raises(InputError, match="row 3"):
        read_csv(path)


def test_csv_rejects_missing_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("0.1,0.2\n")
    with pytest.raises(InputError, match="header"):
        read_csv(path)


def test_csv_rejects_wrong_columns(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("# n=2 d=1 weighted=0\n0.1,0.2,0.9\n")
    with pytest.raises(InputError, match="columns"):
        read_csv(path)


def test_binary_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    pts = rng.uniform(-0.5, 0.5, size=(64, 2))
    cloud = PointCloud(pts, d=1)
    path = tmp_path / "cloud.bin"
    write_binary(path, cloud)
    back = read_binary(path)
    assert np.abs(back.points - pts).max() == 0.0
    assert back.n == 2 and back.d == 1


def test_binary_header_layout(tmp_path):
    path = tmp_path / "cloud.bin"
    write_binary(path, PointCloud(np.array([[0.1, 0.2]]), d=1))
    raw = path.read_bytes()
    assert raw[:4] == b"BFC1"
    assert len(raw) == 16 + 16  # header + one 2-float row


def test_binary_rejects_weights(tmp_path):
    cloud = PointCloud(np.array([[0.1, 0.2]]), d=1, weights=np.array([1.0]))
    with pytest.raises(InputError):
        write_binary(tmp_path / "w.bin", cloud)


def test_binary_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"XXXX" + b"\0" * 12)
    with pytest.raises(InputError, match="magic"):
        read_binary(path)


def test_ingest_normalizes_large_input(tmp_path):
    pts = np.column_stack([np.linspace(0, 10, 30), np.zeros(30)])
    path = tmp_path / "big.csv"
    with open(path, "w") as fh:
        fh.write("# n=2 d=1 weighted=0\n")
        for row in pts:
            fh.write(f"{float(row[0])!r},{float(row[1])!r}\n")
    cloud = ingest(path)
    assert np.linalg.norm(cloud.points, axis=1).max() <= 1.0
    assert cloud.transform is not None


def test_median_nn_distance():
    pts = np.column_stack([np.linspace(0, 1, 101), np.zeros(101)])
    cloud = PointCloud(pts, d=1)
    assert abs(cloud.median_nn_distance() - 0.01) < 1e-9
