import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contactgrasp.transforms import (Transform, axis_angle_quat, frame_from_axes, matrix_to_quat, quat_conj,
                                     quat_mul, quat_to_matrix, random_quaternion, rotation_between)

seeds = st.integers(0, 2**32 - 1)


def test_identity_quaternion_is_identity_matrix():
    assert np.array_equal(quat_to_matrix([1, 0, 0, 0]), np.eye(3))


def test_quarter_turn_about_z():
    r = quat_to_matrix(axis_angle_quat([0, 0, 1], np.pi / 2))
    assert np.allclose(r @ [1, 0, 0], [0, 1, 0], atol=1e-15)


@given(seeds)
def test_matrix_quaternion_round_trip(seed):
    q = random_quaternion(np.random.default_rng(seed))
    q2 = matrix_to_quat(quat_to_matrix(q))
    assert q2[0] >= 0
    assert np.allclose(q2, q * np.sign(q[0]) if q[0] != 0 else q2, atol=1e-12)
    assert np.allclose(quat_to_matrix(q2), quat_to_matrix(q), atol=1e-12)


@given(seeds, seeds)
def test_quaternion_product_matches_matrix_product(s1, s2):
    a = random_quaternion(np.random.default_rng(s1))
    b = random_quaternion(np.random.default_rng(s2))
    assert np.allclose(quat_to_matrix(quat_mul(a, b)), quat_to_matrix(a) @ quat_to_matrix(b), atol=1e-12)
    assert np.allclose(quat_mul(a, quat_conj(a)), [1, 0, 0, 0], atol=1e-12)


@given(seeds)
def test_rotation_between_maps_a_to_b(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(2, 3))
    r = rotation_between(a, b)
    assert np.allclose(r @ (a / np.linalg.norm(a)), b / np.linalg.norm(b), atol=1e-9)


def test_rotation_between_opposite_vectors():
    r = rotation_between([0, 0, 1], [0, 0, -1])
    assert np.allclose(r @ [0, 0, 1], [0, 0, -1], atol=1e-12)


def test_frame_from_axes_is_right_handed():
    r = frame_from_axes([1, 0, 0], [0, 0, -1])
    assert np.allclose(r.T @ r, np.eye(3))
    assert np.isclose(np.linalg.det(r), 1.0)
    assert np.allclose(r[:, 1], np.cross(r[:, 2], r[:, 0]))


@given(seeds)
@settings(max_examples=200)
def test_rigid_round_trip_within_1e9(seed):
    rng = np.random.default_rng(seed)
    tf = Transform(random_quaternion(rng), rng.uniform(-2, 2, 3))
    pose = Transform(random_quaternion(rng), rng.uniform(-1, 1, 3))
    back = tf.inverse() @ (tf @ pose)
    assert np.max(np.abs(back.translation - pose.translation)) <= 1e-9
    assert 1 - abs(np.dot(back.rotation, pose.rotation)) <= 1e-9


def test_non_rigid_matrix_rejected():
    m = np.eye(4)
    m[0, 0] = 2.0
    with pytest.raises(ValueError):
        Transform.from_matrix(m)
    with pytest.raises(ValueError):
        Transform(np.array([1.0, 1.0, 0.0, 0.0]))


def test_transform_dict_round_trip():
    tf = Transform(axis_angle_quat([1, 2, 3], 0.7), [0.1, -0.2, 0.3])
    back = Transform.from_dict(tf.to_dict())
    assert np.array_equal(back.rotation, tf.rotation) and np.array_equal(back.translation, tf.translation)
    assert np.allclose(Transform.from_matrix(tf.as_matrix()).as_matrix(), tf.as_matrix(), atol=1e-15)
