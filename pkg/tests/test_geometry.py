"""SO(3)/SE(3) helpers: round trips, composition, Jacobian identities."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semslam.geometry import (
    Pose,
    exp_so3,
    hat,
    left_jacobian_inv_so3,
    log_so3,
    quat_from_rotvec,
    quat_from_yaw,
    quat_mul,
    quat_normalize,
    quat_to_rot,
    right_jacobian_inv_so3,
    rot_to_quat,
)

small_floats = st.floats(-3.0, 3.0, allow_nan=False, allow_infinity=False)
vec3 = st.tuples(small_floats, small_floats, small_floats).map(np.array)


def random_rotvec(rng, max_angle=3.0):
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v) * rng.uniform(0.0, max_angle)


class TestSo3:
    def test_exp_log_round_trip(self, rng):
        for _ in range(50):
            phi = random_rotvec(rng)
            assert np.allclose(log_so3(exp_so3(phi)), phi, atol=1e-9)

    def test_exp_zero_is_identity(self):
        assert np.allclose(exp_so3(np.zeros(3)), np.eye(3))

    def test_log_near_pi(self, rng):
        for _ in range(20):
            axis = rng.standard_normal(3)
            axis /= np.linalg.norm(axis)
            phi = axis * (np.pi - 1e-7)
            back = log_so3(exp_so3(phi))
            assert np.allclose(exp_so3(back), exp_so3(phi), atol=1e-6)

    def test_hat_antisymmetric(self, rng):
        v = rng.standard_normal(3)
        K = hat(v)
        assert np.allclose(K, -K.T)
        w = rng.standard_normal(3)
        assert np.allclose(K @ w, np.cross(v, w))

    def test_jacobian_inverses_consistent(self, rng):
        # J_r(phi) = J_l(-phi), so the inverses must agree the same way
        for _ in range(10):
            phi = random_rotvec(rng)
            assert np.allclose(right_jacobian_inv_so3(phi), left_jacobian_inv_so3(-phi))

    def test_left_jacobian_inv_small_angle_series(self):
        phi = np.array([1e-8, -2e-8, 1e-8])
        assert np.allclose(left_jacobian_inv_so3(phi), np.eye(3) - 0.5 * hat(phi), atol=1e-12)


class TestQuaternion:
    def test_quat_rot_round_trip(self, rng):
        for _ in range(50):
            q = quat_normalize(rng.standard_normal(4))
            q2 = rot_to_quat(quat_to_rot(q))
            assert min(np.linalg.norm(q - q2), np.linalg.norm(q + q2)) < 1e-9

    def test_quat_mul_matches_rotation_product(self, rng):
        a = quat_normalize(rng.standard_normal(4))
        b = quat_normalize(rng.standard_normal(4))
        assert np.allclose(quat_to_rot(quat_mul(a, b)), quat_to_rot(a) @ quat_to_rot(b))

    def test_quat_from_rotvec_matches_exp(self, rng):
        phi = random_rotvec(rng)
        assert np.allclose(quat_to_rot(quat_from_rotvec(phi)), exp_so3(phi), atol=1e-12)

    def test_canonical_sign(self):
        q = quat_normalize(np.array([-1.0, 0.2, 0.0, 0.0]))
        assert q[0] > 0

    def test_zero_quaternion_rejected(self):
        with pytest.raises(ValueError):
            quat_normalize(np.zeros(4))

    def test_quat_from_yaw(self):
        R = quat_to_rot(quat_normalize(quat_from_yaw(np.pi / 2)))
        assert np.allclose(R @ np.array([1.0, 0, 0]), [0, 1, 0], atol=1e-12)


class TestPose:
    def test_compose_inverse_is_identity(self, rng):
        for _ in range(20):
            p = Pose(rng.standard_normal(3), quat_normalize(rng.standard_normal(4)))
            ident = p.compose(p.inverse())
            assert ident.approx_equal(Pose())

    def test_relative_to(self, rng):
        a = Pose(rng.standard_normal(3), quat_normalize(rng.standard_normal(4)))
        b = Pose(rng.standard_normal(3), quat_normalize(rng.standard_normal(4)))
        rel = a.relative_to(b)
        assert b.compose(rel).approx_equal(a)

    def test_transform_round_trip(self, rng):
        p = Pose(rng.standard_normal(3), quat_normalize(rng.standard_normal(4)))
        x = rng.standard_normal(3)
        assert np.allclose(p.transform_inverse(p.transform(x)), x)

    @given(vec3, vec3)
    @settings(max_examples=25, deadline=None)
    def test_pure_translation_compose_adds(self, t1, t2):
        assert np.allclose(Pose(t1).compose(Pose(t2)).translation, t1 + t2)

    def test_rotation_always_unit_norm(self, rng):
        p = Pose(np.zeros(3), np.array([2.0, 0.0, 0.0, 0.0]))
        assert abs(np.linalg.norm(p.rotation) - 1.0) < 1e-12
