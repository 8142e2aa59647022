import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tacs.errors import DegenerateSubspaceError, InvalidInputError, InvalidTransformError
from tacs.geometry import (
    RigidTransform, apply_rigid, com_norm, pairwise_distances, project_zero_com, random_rigid,
    random_rotation, read_points_binary, read_points_csv, sample_subspace_gaussian, sphere_fit_distance,
    sphere_manifold_distance, subspace_basis, write_points_binary, write_points_csv,
)

finite = st.floats(-50, 50, allow_nan=False)
point_sets = st.integers(2, 6).flatmap(lambda M: arrays(float, (M, 3), elements=finite))


@given(point_sets)
def test_projection_is_idempotent_and_centered(x):
    p = project_zero_com(x)
    assert np.abs(p.mean(axis=0)).max() <= 1e-9 * (1 + np.abs(x).max())
    np.testing.assert_allclose(project_zero_com(p), p, atol=1e-9 * (1 + np.abs(x).max()))


@settings(max_examples=50)
@given(point_sets, st.integers(0, 2**32 - 1))
def test_rigid_motion_preserves_distances(x, seed):
    g = random_rigid(3, np.random.default_rng(seed), scale=10.0)
    np.testing.assert_allclose(pairwise_distances(apply_rigid(x, g)), pairwise_distances(x), atol=1e-8)


def test_projection_rejects_nonfinite():
    x = np.zeros((3, 3))
    x[1, 2] = np.nan
    with pytest.raises(InvalidInputError):
        project_zero_com(x)


def test_subspace_gaussian_moments():
    rng = np.random.default_rng(0)
    x = sample_subspace_gaussian(4, 3, rng, size=40000)
    assert com_norm(x).max() < 1e-12
    # per-coordinate variance in the zero-CoM subspace is (M-1)/M
    np.testing.assert_allclose(x.var(axis=0), np.full((4, 3), 0.75), atol=0.02)


def test_subspace_gaussian_needs_two_atoms():
    with pytest.raises(DegenerateSubspaceError):
        sample_subspace_gaussian(1, 3, np.random.default_rng(0))


def test_subspace_basis_orthonormal():
    Q = subspace_basis(5)
    np.testing.assert_allclose(Q.T @ Q, np.eye(4), atol=1e-12)
    np.testing.assert_allclose(Q.sum(axis=0), 0, atol=1e-12)


def test_random_rotation_is_proper():
    rng = np.random.default_rng(3)
    for _ in range(20):
        R = random_rotation(3, rng)
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


def test_random_rotation_is_haar():
    # first column of a Haar rotation is uniform on the sphere: E[z^2] = 1/3
    rng = np.random.default_rng(4)
    cols = np.array([random_rotation(3, rng)[:, 0] for _ in range(6000)])
    assert abs(cols.mean(axis=0)).max() < 0.04
    assert (cols[:, 2] ** 2).mean() == pytest.approx(1 / 3, abs=0.02)


def test_rigid_transform_validation():
    with pytest.raises(InvalidTransformError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(InvalidTransformError):
        RigidTransform(2 * np.eye(3), np.zeros(3))
    x = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(apply_rigid(x, RigidTransform.identity(3)), x)


def test_manifold_distances():
    rng = np.random.default_rng(5)
    v = rng.normal(size=(50, 3, 3))
    raw = v / np.linalg.norm(v, axis=-1, keepdims=True)
    assert sphere_manifold_distance(raw).max() < 1e-12
    # the fitted distance ignores where the sphere center went
    assert sphere_fit_distance(project_zero_com(raw)).max() < 1e-7
    assert sphere_fit_distance(raw + 3.0).max() < 1e-7
    # equilateral triangle with circumradius R > 1: best center is the centroid, distance R - 1
    R = np.sqrt(3.0)
    ang = 2 * np.pi * np.arange(3) / 3
    tri = np.stack([R * np.cos(ang), R * np.sin(ang), np.zeros(3)], axis=-1)
    assert sphere_fit_distance(tri) == pytest.approx(R - 1, abs=1e-8)
    assert sphere_manifold_distance(np.zeros((2, 3))) == 1.0


def test_csv_roundtrip(tmp_path):
    x = np.random.default_rng(6).normal(size=(4, 3, 3))
    write_points_csv(tmp_path / "p.csv", x)
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "sample_id,atom_index,x,y,z"
    np.testing.assert_array_equal(read_points_csv(tmp_path / "p.csv"), x)
    y = x[:, :, :2]
    write_points_csv(tmp_path / "q.csv", y)
    np.testing.assert_array_equal(read_points_csv(tmp_path / "q.csv"), y)


def test_binary_roundtrip_and_layout(tmp_path):
    x = np.random.default_rng(7).normal(size=(5, 3, 3))
    path = tmp_path / "s.bin"
    write_points_binary(path, x)
    raw = path.read_bytes()
    assert raw[:4] == b"TACS"
    assert np.frombuffer(raw[4:16], "<u4").tolist() == [1, 3, 3]
    assert len(raw) == 16 + x.size * 8
    np.testing.assert_array_equal(read_points_binary(path), x)


def test_binary_rejects_corruption(tmp_path):
    path = tmp_path / "s.bin"
    write_points_binary(path, np.zeros((2, 3, 3)))
    raw = path.read_bytes()
    (tmp_path / "bad.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(InvalidInputError):
        read_points_binary(tmp_path / "bad.bin")
    (tmp_path / "short.bin").write_bytes(raw[:-8])
    with pytest.raises(InvalidInputError):
        read_points_binary(tmp_path / "short.bin")
