import math

import numpy as np
import pytest

from rotunda.geometry import (
    InvalidPose,
    InvalidRay,
    Pose,
    Ray,
    compose_pose,
    quat_angle_between,
    quat_from_axis_angle,
    quat_from_matrix,
    quat_multiply,
    quat_rotate,
    quat_to_matrix,
    rotvec_from_matrix,
    wrap_angle,
)


def test_compose_rotation_then_translation():
    a = Pose.from_axis_angle([0, 0, 1], math.pi / 2)
    b = Pose.from_xyz(1.0, 0.0, 0.0)
    out = compose_pose(a, b)
    assert np.allclose(out.position, [0.0, 1.0, 0.0], atol=1e-12)


def test_compose_translations_add():
    out = compose_pose(Pose.from_xyz(1, 0, 0), Pose.from_xyz(0, 1, 0))
    assert np.allclose(out.position, [1.0, 1.0, 0.0])
    assert np.allclose(out.orientation, [1, 0, 0, 0])


def test_pose_inverse_roundtrip():
    rng = np.random.default_rng(42)
    for _ in range(200):
        axis = rng.normal(size=3)
        p = Pose.from_axis_angle(axis, rng.uniform(-math.pi, math.pi), rng.normal(size=3))
        r = p.compose(p.inverse())
        assert np.linalg.norm(r.position) < 1e-9
        assert quat_angle_between(r.orientation, [1, 0, 0, 0]) < 1e-9


def test_compose_matches_matrix_product():
    rng = np.random.default_rng(3)
    for _ in range(100):
        a = Pose.from_axis_angle(rng.normal(size=3), rng.uniform(-3, 3), rng.normal(size=3))
        b = Pose.from_axis_angle(rng.normal(size=3), rng.uniform(-3, 3), rng.normal(size=3))
        T = a.matrix() @ b.matrix()
        c = compose_pose(a, b)
        assert np.allclose(c.matrix(), T, atol=1e-12)


def test_non_unit_quaternion_rejected():
    with pytest.raises(InvalidPose):
        Pose(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.1]))
    with pytest.raises(InvalidPose):
        Pose(np.array([np.nan, 0, 0]), np.array([1.0, 0, 0, 0]))


def test_quat_rotate_agrees_with_matrix():
    rng = np.random.default_rng(8)
    for _ in range(200):
        q = quat_from_axis_angle(rng.normal(size=3), rng.uniform(-math.pi, math.pi))
        v = rng.normal(size=3)
        assert np.allclose(quat_rotate(q, v), quat_to_matrix(q) @ v, atol=1e-12)


def test_quat_multiply_composes_rotations():
    rng = np.random.default_rng(9)
    for _ in range(100):
        q1 = quat_from_axis_angle(rng.normal(size=3), rng.uniform(-math.pi, math.pi))
        q2 = quat_from_axis_angle(rng.normal(size=3), rng.uniform(-math.pi, math.pi))
        R = quat_to_matrix(quat_multiply(q1, q2))
        assert np.allclose(R, quat_to_matrix(q1) @ quat_to_matrix(q2), atol=1e-12)


def test_quat_from_matrix_roundtrip_including_near_pi():
    rng = np.random.default_rng(10)
    angles = list(rng.uniform(-math.pi, math.pi, 200)) + [math.pi - 1e-9, math.pi, -math.pi + 1e-7]
    for a in angles:
        q = quat_from_axis_angle(rng.normal(size=3), a)
        q2 = quat_from_matrix(quat_to_matrix(q))
        assert quat_angle_between(q, q2) < 1e-6


def test_rotvec_small_and_large_angles():
    for angle in (1e-9, 1e-4, 0.5, 2.0, 3.1):
        q = quat_from_axis_angle([0, 0, 1], angle)
        rv = rotvec_from_matrix(quat_to_matrix(q))
        assert np.allclose(rv, [0, 0, angle], atol=1e-8)


def test_ray_requires_unit_direction():
    with pytest.raises(InvalidRay):
        Ray(np.zeros(3), np.array([0.0, 0.0, 2.0]))
    r = Ray(np.array([1.0, 2.0, 3.0]), np.array([0.0, 1.0, 0.0]))
    assert np.allclose(r.point_at(2.0), [1.0, 4.0, 3.0])


def test_transform_point_and_direction():
    p = Pose.from_axis_angle([0, 0, 1], math.pi / 2, position=[1, 0, 0])
    assert np.allclose(p.transform_point([1, 0, 0]), [1, 1, 0], atol=1e-12)
    assert np.allclose(p.transform_direction([1, 0, 0]), [0, 1, 0], atol=1e-12)


def test_wrap_angle():
    assert wrap_angle(math.pi + 0.1) == pytest.approx(-math.pi + 0.1)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(0.3) == pytest.approx(0.3)
