import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hptr.geometry import (EmptyNeighborhoodError, Pose2, RelPose, compose, inverse, knn_indices, relative_pose,
                           relative_pose_array, transform_points, wrap_angle)

from oracles import knn_full_sort, relative_pose_matrix

angles = st.floats(-50.0, 50.0, allow_nan=False)
coords = st.floats(-100.0, 100.0, allow_nan=False)
poses = st.tuples(coords, coords, angles)


def test_wrap_angle_cases():
    assert wrap_angle(0.0) == 0.0
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == math.pi
    assert wrap_angle(math.pi) == math.pi
    with pytest.raises(ValueError):
        wrap_angle(float("nan"))


@given(angles)
def test_wrap_angle_range_and_congruence(theta):
    w = wrap_angle(theta)
    assert -math.pi < w <= math.pi
    k = (theta - w) / (2 * math.pi)
    assert abs(k - round(k)) < 1e-9


def test_pose2_wraps_heading():
    assert Pose2(0, 0, -math.pi).theta == math.pi
    assert Pose2(1, 2, 7.0).theta == pytest.approx(7.0 - 2 * math.pi)


def test_relative_pose_cases():
    r = relative_pose(Pose2(0, 0, 0), Pose2(3, 4, math.pi / 2))
    assert isinstance(r, RelPose)
    assert (r.dx, r.dy, r.dtheta) == pytest.approx((3, 4, math.pi / 2))
    r = relative_pose(Pose2(2, -1, 0.4), Pose2(2, -1, 0.4))
    assert (r.dx, r.dy, r.dtheta) == pytest.approx((0, 0, 0))
    # frozen from the homogeneous-matrix oracle
    r = relative_pose(Pose2(1, 1, math.pi / 2), Pose2(1, 2, math.pi))
    assert (r.dx, r.dy, r.dtheta) == pytest.approx((1.0, 0.0, math.pi / 2), abs=1e-12)


@given(poses, poses)
def test_relative_pose_matches_matrix_oracle(a, b):
    got = relative_pose_array(np.array(a), np.array(b))
    ref = relative_pose_matrix(a, b)
    np.testing.assert_allclose(got[:2], ref[:2], atol=1e-9)
    assert abs(wrap_angle(got[2] - ref[2])) < 1e-9


@given(poses, poses, poses)
def test_relative_pose_rigid_invariance(a, b, g):
    a, b, g = map(np.array, (a, b, g))
    r0 = relative_pose_array(a, b)
    r1 = relative_pose_array(compose(g, a), compose(g, b))
    np.testing.assert_allclose(r1[:2], r0[:2], atol=1e-9)
    assert abs(wrap_angle(r1[2] - r0[2])) < 1e-9


@given(poses, poses)
def test_relative_poses_compose_to_identity(a, b):
    a, b = np.array(a), np.array(b)
    ident = compose(relative_pose_array(a, b), relative_pose_array(b, a))
    np.testing.assert_allclose(ident[:2], 0.0, atol=1e-9)
    assert abs(ident[2]) < 1e-9 or abs(abs(ident[2]) - 2 * math.pi) < 1e-9


def test_inverse_composes_to_identity():
    p = np.array([3.0, -2.0, 2.5])
    np.testing.assert_allclose(compose(p, inverse(p)), 0.0, atol=1e-12)


def test_transform_points_cases(rng):
    pts = rng.normal(size=(5, 2))
    np.testing.assert_allclose(transform_points(np.zeros(3), pts), pts)
    np.testing.assert_allclose(transform_points(np.array([0, 0, math.pi / 2]), np.array([[1.0, 0.0]])),
                               [[0.0, 1.0]], atol=1e-15)


@given(poses)
def test_transform_points_round_trip(p):
    pts = np.random.default_rng(0).normal(size=(7, 2)) * 30
    back = transform_points(p, transform_points(p, pts, "local_to_global"), "global_to_local")
    np.testing.assert_allclose(back, pts, atol=1e-9)


def test_transform_points_rejects_unknown_direction():
    with pytest.raises(ValueError):
        transform_points(np.zeros(3), np.zeros((1, 2)), "sideways")


def test_knn_simple_cases():
    q = np.array([[0.0, 0.0, 0.0]])
    t = np.array([[3.0, 0, 0], [1.0, 0, 0], [0, 2.0, 0]])
    nb = knn_indices(q, t, np.ones(3, bool), 2)
    np.testing.assert_array_equal(nb.idx, [[1, 2]])
    assert nb.valid.all()
    nb = knn_indices(q, t, np.ones(3, bool), 10)
    np.testing.assert_array_equal(nb.idx, [[1, 2, 0]])


def test_knn_tie_break_and_validity():
    q = np.zeros((1, 3))
    t = np.array([[1.0, 0, 0], [0, 1.0, 0], [-1.0, 0, 0], [0, -1.0, 0]])
    nb = knn_indices(q, t, np.array([True, False, True, True]), 4)
    np.testing.assert_array_equal(nb.idx[0, :3], [0, 2, 3])
    np.testing.assert_array_equal(nb.valid, [[True, True, True, False]])


def test_knn_empty_neighborhood():
    with pytest.raises(EmptyNeighborhoodError):
        knn_indices(np.zeros((1, 3)), np.zeros((2, 3)), np.zeros(2, bool), 1)
    with pytest.raises(ValueError):
        knn_indices(np.zeros((1, 3)), np.zeros((2, 3)), np.ones(2, bool), 0)


def test_knn_may_select_itself():
    p = np.array([[0.0, 0, 0], [5.0, 0, 0]])
    nb = knn_indices(p, p, np.ones(2, bool), 1)
    np.testing.assert_array_equal(nb.idx[:, 0], [0, 1])


def random_knn_case(seed):
    r = np.random.default_rng(seed)
    m, n, k = r.integers(1, 12), r.integers(1, 30), r.integers(1, 12)
    # integer grid coordinates produce many exact distance ties
    q = np.concatenate([r.integers(-4, 5, size=(m, 2)), r.uniform(-3, 3, (m, 1))], axis=1).astype(float)
    t = np.concatenate([r.integers(-4, 5, size=(n, 2)), r.uniform(-3, 3, (n, 1))], axis=1).astype(float)
    valid = r.random(n) < 0.8
    valid[r.integers(n)] = True
    return q, t, valid, int(k)


def test_knn_matches_full_sort_oracle():
    for seed in range(300):
        q, t, valid, k = random_knn_case(seed)
        nb = knn_indices(q, t, valid, k)
        idx, ok = knn_full_sort(q, t, valid, k)
        np.testing.assert_array_equal(nb.valid, ok)
        np.testing.assert_array_equal(np.where(ok, nb.idx, -1), np.where(ok, idx, -1))
        assert valid[nb.idx[nb.valid]].all()


@given(poses)
def test_knn_invariant_under_rigid_transform(g):
    r = np.random.default_rng(5)
    q = np.concatenate([r.normal(size=(6, 2)) * 10, r.uniform(-3, 3, (6, 1))], axis=1)
    t = np.concatenate([r.normal(size=(15, 2)) * 10, r.uniform(-3, 3, (15, 1))], axis=1)
    valid = r.random(15) < 0.8
    a = knn_indices(q, t, valid, 5)
    b = knn_indices(compose(np.array(g), q), compose(np.array(g), t), valid, 5)
    np.testing.assert_array_equal(a.idx, b.idx)
    np.testing.assert_array_equal(a.valid, b.valid)
