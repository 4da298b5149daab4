import numpy as np
import pytest

from splatloc.errors import BehindCameraError, InvalidInputError
from splatloc.geometry import (
    Intrinsics,
    Pose,
    pose_compose,
    pose_inverse,
    project_point,
    projection_jacobian,
    quat_from_axis_angle,
    quat_to_rotation,
    rotation_to_quat,
    unproject_pixel,
)


def random_unit_quat(rng):
    q = rng.standard_normal(4)
    return q / np.linalg.norm(q)


def random_pose(rng):
    return Pose(random_unit_quat(rng), rng.uniform(-5, 5, 3))


def angle_axis_matrix(axis, angle):
    """Independent Rodrigues construction for cross-checking quat_to_rotation."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


class TestQuatToRotation:
    def test_identity(self):
        assert np.allclose(quat_to_rotation([1, 0, 0, 0]), np.eye(3))

    def test_quarter_turn_about_x(self):
        R = quat_to_rotation([np.sqrt(0.5), np.sqrt(0.5), 0, 0])
        assert np.allclose(R @ np.array([0, 1, 0]), [0, 0, 1], atol=1e-12)

    def test_matches_angle_axis_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            axis = rng.standard_normal(3)
            angle = rng.uniform(-np.pi, np.pi)
            q = quat_from_axis_angle(axis, angle)
            assert np.allclose(quat_to_rotation(q), angle_axis_matrix(axis, angle), atol=1e-12)

    def test_orthonormal_det_one(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            R = quat_to_rotation(random_unit_quat(rng))
            assert np.allclose(R.T @ R, np.eye(3), atol=1e-9)
            assert abs(np.linalg.det(R) - 1.0) < 1e-9

    def test_zero_quaternion_rejected(self):
        with pytest.raises(InvalidInputError):
            quat_to_rotation([0, 0, 0, 0])

    def test_rotation_quat_roundtrip(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            q = random_unit_quat(rng)
            if q[0] < 0:
                q = -q
            q2 = rotation_to_quat(quat_to_rotation(q))
            assert np.allclose(q, q2, atol=1e-9)


class TestProjection:
    K = Intrinsics(fx=100, fy=100, cx=50, cy=50, width=100, height=100)

    def test_optical_axis(self):
        u, v, z = project_point([0, 0, 2], Pose.identity(), self.K)
        assert (u, v, z) == (50.0, 50.0, 2.0)

    def test_off_axis(self):
        u, v, z = project_point([1, 0, 2], Pose.identity(), self.K)
        assert (u, v, z) == (100.0, 50.0, 2.0)

    def test_behind_camera(self):
        with pytest.raises(BehindCameraError):
            project_point([0, 0, -1], Pose.identity(), self.K)
        with pytest.raises(BehindCameraError):
            project_point([0, 0, 0.01], Pose.identity(), self.K)

    def test_matches_homogeneous_matrix_oracle(self):
        rng = np.random.default_rng(19)
        Kmat = self.K.matrix()
        for _ in range(200):
            pose = random_pose(rng)
            p = rng.uniform(-3, 3, 3)
            pc = pose.apply(p)
            if pc[2] <= self.K.near:
                continue
            P = Kmat @ pose.matrix()[:3, :]
            uvw = P @ np.append(p, 1.0)
            u, v, z = project_point(p, pose, self.K)
            assert abs(u - uvw[0] / uvw[2]) < 1e-9
            assert abs(v - uvw[1] / uvw[2]) < 1e-9
            assert abs(z - uvw[2]) < 1e-9

    def test_unproject_roundtrip(self):
        rng = np.random.default_rng(23)
        for _ in range(100):
            p_cam = np.array([rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0.5, 10)])
            u = self.K.fx * p_cam[0] / p_cam[2] + self.K.cx
            v = self.K.fy * p_cam[1] / p_cam[2] + self.K.cy
            assert np.allclose(unproject_pixel(u, v, p_cam[2], self.K), p_cam, atol=1e-12)


class TestProjectionJacobian:
    K = Intrinsics(fx=100, fy=100, cx=50, cy=50, width=100, height=100)

    def test_on_axis(self):
        J = projection_jacobian([0, 0, 2], self.K)
        assert np.allclose(J, [[50, 0, 0], [0, 50, 0]])

    def test_direct_substitution(self):
        J = projection_jacobian([1, 1, 2], self.K)
        assert np.allclose(J, [[50, 0, -25], [0, 50, -25]])

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(31)
        pose = Pose.identity()
        h = 1e-5
        for _ in range(1000):
            p = np.array([rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0.5, 10)])
            J = projection_jacobian(p, self.K)
            J_fd = np.zeros((2, 3))
            for k in range(3):
                dp = np.zeros(3)
                dp[k] = h
                up, vp, _ = project_point(p + dp, pose, self.K)
                um, vm, _ = project_point(p - dp, pose, self.K)
                J_fd[:, k] = [(up - um) / (2 * h), (vp - vm) / (2 * h)]
            assert np.allclose(J, J_fd, rtol=1e-5, atol=1e-6)


class TestPoseGroup:
    def test_identity_compose(self):
        rng = np.random.default_rng(5)
        P = random_pose(rng)
        Q = pose_compose(Pose.identity(), P)
        assert np.allclose(Q.matrix(), P.matrix(), atol=1e-12)

    def test_double_inverse(self):
        rng = np.random.default_rng(6)
        P = random_pose(rng)
        Q = pose_inverse(pose_inverse(P))
        assert np.allclose(Q.matrix(), P.matrix(), atol=1e-12)

    def test_compose_inverse_is_identity(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            P = random_pose(rng)
            I = pose_compose(P, pose_inverse(P))
            assert np.allclose(I.matrix(), np.eye(4), atol=1e-9)

    def test_compose_matches_matrix_oracle(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            A, B = random_pose(rng), random_pose(rng)
            C = pose_compose(A, B)
            assert np.allclose(C.matrix(), A.matrix() @ B.matrix(), atol=1e-12)

    def test_associativity(self):
        rng = np.random.default_rng(10)
        for _ in range(200):
            A, B, C = (random_pose(rng) for _ in range(3))
            left = pose_compose(pose_compose(A, B), C)
            right = pose_compose(A, pose_compose(B, C))
            assert np.allclose(left.matrix(), right.matrix(), atol=1e-9)

    def test_quaternion_stays_unit(self):
        rng = np.random.default_rng(12)
        P = random_pose(rng)
        for _ in range(100):
            P = pose_compose(P, random_pose(rng))
            assert abs(np.linalg.norm(P.quat) - 1.0) < 1e-9

    def test_apply_matches_matrix(self):
        rng = np.random.default_rng(13)
        P = random_pose(rng)
        pts = rng.uniform(-4, 4, (50, 3))
        hom = (P.matrix() @ np.hstack([pts, np.ones((50, 1))]).T).T[:, :3]
        assert np.allclose(P.apply(pts), hom, atol=1e-12)

    def test_camera_center(self):
        rng = np.random.default_rng(14)
        P = random_pose(rng)
        assert np.allclose(P.apply(P.camera_center()), np.zeros(3), atol=1e-12)


class TestIntrinsicsValidation:
    def test_bad_values_rejected(self):
        with pytest.raises(InvalidInputError):
            Intrinsics(fx=0, fy=1, cx=0, cy=0, width=1, height=1)
        with pytest.raises(InvalidInputError):
            Intrinsics(fx=1, fy=1, cx=0, cy=0, width=0, height=1)
        with pytest.raises(InvalidInputError):
            Intrinsics(fx=1, fy=1, cx=0, cy=0, width=1, height=1, near=0)
