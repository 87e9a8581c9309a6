import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from lobstr import rotation as rot

finite = st.floats(-10, 10, allow_nan=False)
vec3 = st.lists(finite, min_size=3, max_size=3)


def test_axis_angle_matches_rodrigues_oracle():
    axis = np.array([1.0, 2.0, -0.5])
    axis /= np.linalg.norm(axis)
    th = 0.7
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    expect = np.eye(3) + np.sin(th) * K + (1 - np.cos(th)) * K @ K
    np.testing.assert_allclose(rot.axis_angle(axis, th), expect, atol=1e-12)


def test_elementary_rotations_are_right_handed():
    # +90 about Y takes +Z to +X
    np.testing.assert_allclose(rot.rot_y(90) @ [0, 0, 1], [1, 0, 0], atol=1e-12)
    np.testing.assert_allclose(rot.rot_x(90) @ [0, 1, 0], [0, 0, 1], atol=1e-12)
    np.testing.assert_allclose(rot.rot_z(90) @ [1, 0, 0], [0, 1, 0], atol=1e-12)


def test_euler_is_intrinsic_product():
    a = [10.0, -35.0, 72.0]
    np.testing.assert_allclose(rot.euler_to_matrix(a, "ZXY"),
                               rot.rot_z(a[0]) @ rot.rot_x(a[1]) @ rot.rot_y(a[2]), atol=1e-12)
    back = rot.matrix_to_euler(rot.euler_to_matrix(a, "ZXY"), "ZXY")
    np.testing.assert_allclose(back, a, atol=1e-9)


def test_6d_layout_is_forward_then_up():
    R = rot.rot_y(30) @ rot.rot_x(20)
    v = rot.rot_to_6d(R)
    np.testing.assert_allclose(v[:3], R[:, 2])
    np.testing.assert_allclose(v[3:], R[:, 1])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(
    lambda q: np.linalg.norm(q) > 1e-3))
def test_6d_round_trip_property(q):
    R = Rotation.from_quat(np.array(q) / np.linalg.norm(q)).as_matrix()
    np.testing.assert_allclose(rot.sixdof_to_rot(rot.rot_to_6d(R)), R, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(vec3, vec3)
def test_decoded_6d_is_a_rotation(f, u):
    f, u = np.array(f), np.array(u)
    uo = u - (u @ f) / (f @ f) * f if f @ f > 0 else u
    if np.linalg.norm(f) < 1e-3 or np.linalg.norm(uo) < 1e-3 * max(np.linalg.norm(u), 1):
        return
    R = rot.sixdof_to_rot(np.concatenate([f, u]))
    assert rot.orthonormality_error(R) < 1e-12
    assert abs(np.linalg.det(R) - 1) < 1e-12
    # forward direction preserved exactly
    np.testing.assert_allclose(R[:, 2], f / np.linalg.norm(f), atol=1e-12)


def test_degenerate_6d_raises():
    with pytest.raises(rot.DegenerateRotationError):
        rot.sixdof_to_rot([0, 0, 0, 0, 1, 0])
    with pytest.raises(rot.DegenerateRotationError):
        rot.sixdof_to_rot([0, 0, 1, 0, 0, 2])


def test_geodesic_angle_against_axis_angle_oracle(rng):
    R = rot.random_rotations(50, rng)
    axes = rng.standard_normal((50, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    ang = rng.uniform(0, np.pi, 50)
    B = R @ rot.axis_angle(axes, ang)
    np.testing.assert_allclose(rot.geodesic_angle(R, B), ang, atol=1e-6)


def test_slerp_endpoints_and_midpoint(rng):
    A, B = rot.random_rotations(2, rng)
    np.testing.assert_allclose(rot.slerp(A, B, 0.0), A, atol=1e-12)
    np.testing.assert_allclose(rot.slerp(A, B, 1.0), B, atol=1e-12)
    M = rot.slerp(A, B, 0.5)
    full = rot.geodesic_angle(A, B)
    assert rot.geodesic_angle(A, M) == pytest.approx(full / 2, abs=1e-9)
    assert rot.geodesic_angle(M, B) == pytest.approx(full / 2, abs=1e-9)


def test_yaw_of_extracts_heading():
    assert rot.yaw_of(rot.rot_y(37.0) @ rot.rot_x(10.0)) == pytest.approx(np.radians(37.0))


def test_rotvec_tiny_angles():
    rv = np.array([[1e-10, 0, 0], [0, 3e-9, 4e-9], [0, 0, 0]])
    R = rot.rotvec_to_matrix(rv)
    np.testing.assert_allclose(R, Rotation.from_rotvec(rv).as_matrix(), atol=1e-15)
