"""SE(3) poses, quaternion math, pinhole cameras and the projection Jacobian.

Quaternions are stored (w, x, y, z). Poses are world-to-camera internally;
trajectory files use camera-to-world and are converted at the I/O boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCameraError, InvalidInputError


def normalize_quat(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (4,):
        raise InvalidInputError(f"quaternion must have 4 components, got shape {q.shape}")
    n = float(np.linalg.norm(q))
    if n == 0.0 or not np.isfinite(n):
        raise InvalidInputError("zero-norm quaternion")
    return q / n


def quat_to_rotation(q) -> np.ndarray:
    """Unit quaternion (w,x,y,z) -> orthonormal 3x3 rotation matrix.

    Inputs further than 1e-6 from unit norm are renormalized; an exactly
    zero quaternion raises InvalidInputError.
    """
    w, x, y, z = normalize_quat(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def rotation_to_quat(R) -> np.ndarray:
    """3x3 rotation matrix -> unit quaternion (w,x,y,z), w >= 0."""
    R = np.asarray(R, dtype=np.float64)
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(R)))
        if i == 0:
            s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
            q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s,
                          (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
        elif i == 1:
            s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
            q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s,
                          0.25 * s, (R[1, 2] + R[2, 1]) / s])
        else:
            s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
            q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
                          (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def quat_from_axis_angle(axis, angle_rad: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n == 0:
        raise InvalidInputError("zero rotation axis")
    axis = axis / n
    half = 0.5 * angle_rad
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


@dataclass(frozen=True)
class Pose:
    """Rigid transform: world-to-camera rotation (unit quaternion) + translation."""

    quat: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    timestamp: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "quat", normalize_quat(self.quat))
        t = np.asarray(self.translation, dtype=np.float64)
        if t.shape != (3,):
            raise InvalidInputError(f"translation must be a 3-vector, got shape {t.shape}")
        object.__setattr__(self, "translation", t.copy())

    @staticmethod
    def identity(timestamp: float | None = None) -> "Pose":
        return Pose(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3), timestamp)

    @staticmethod
    def from_matrix(T, timestamp: float | None = None) -> "Pose":
        T = np.asarray(T, dtype=np.float64)
        return Pose(rotation_to_quat(T[:3, :3]), T[:3, 3], timestamp)

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_rotation(self.quat)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def apply(self, points) -> np.ndarray:
        """Transform one point or an (N,3) array of points."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def camera_center(self) -> np.ndarray:
        """Camera position in world coordinates (for a world-to-camera pose)."""
        return -self.rotation.T @ self.translation


def pose_compose(a: Pose, b: Pose) -> Pose:
    """Composite transform: (a o b)(x) = a(b(x))."""
    q = normalize_quat(quat_multiply(a.quat, b.quat))
    t = a.rotation @ b.translation + a.translation
    return Pose(q, t, b.timestamp if b.timestamp is not None else a.timestamp)


def pose_inverse(p: Pose) -> Pose:
    q = quat_conjugate(p.quat)
    Rt = p.rotation.T
    return Pose(q, -Rt @ p.translation, p.timestamp)


def pose_delta(a: Pose, b: Pose) -> tuple[float, float]:
    """(translation distance, rotation angle in radians) between two poses."""
    dt = float(np.linalg.norm(a.translation - b.translation))
    dq = quat_multiply(quat_conjugate(a.quat), b.quat)
    # angle of the relative rotation; w component may exceed 1 by rounding
    ang = 2.0 * np.arccos(min(1.0, abs(float(dq[0]))))
    return dt, float(ang)


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera: focal lengths/principal point in pixels, near plane in scene units."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.05

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidInputError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise InvalidInputError("image dimensions must be at least 1x1")
        if self.near <= 0:
            raise InvalidInputError("near plane must be positive")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])


def project_point(p, pose: Pose, K: Intrinsics) -> tuple[float, float, float]:
    """World point -> (u, v, camera depth). Raises BehindCameraError for z <= near."""
    pc = pose.apply(np.asarray(p, dtype=np.float64))
    z = float(pc[2])
    if z <= K.near:
        raise BehindCameraError(f"depth {z:.6g} <= near plane {K.near:.6g}")
    u = K.fx * pc[0] / z + K.cx
    v = K.fy * pc[1] / z + K.cy
    return float(u), float(v), z


def projection_jacobian(p_cam, K: Intrinsics) -> np.ndarray:
    """d(u,v)/d(camera point): 2x3 Jacobian of the pinhole projection."""
    x, y, z = np.asarray(p_cam, dtype=np.float64)
    if z <= K.near:
        raise BehindCameraError(f"depth {z:.6g} <= near plane {K.near:.6g}")
    z2 = z * z
    return np.array([[K.fx / z, 0.0, -K.fx * x / z2],
                     [0.0, K.fy / z, -K.fy * y / z2]])


def unproject_pixel(u: float, v: float, depth: float, K: Intrinsics) -> np.ndarray:
    """Pixel + camera depth -> camera-space 3D point."""
    return np.array([(u - K.cx) / K.fx * depth,
                     (v - K.cy) / K.fy * depth,
                     depth])
