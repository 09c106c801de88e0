"""Minimal SE(3) / SO(3) helpers: quaternions, rotation vectors, poses.

Quaternions are (w, x, y, z), always kept at unit norm. Rotation-vector
increments are applied on the right (body frame).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_EPS = 1e-12


def hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric cross-product matrix."""
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def exp_so3(phi: np.ndarray) -> np.ndarray:
    """Rodrigues formula: rotation vector -> rotation matrix."""
    angle = np.linalg.norm(phi)
    K = hat(phi)
    if angle < 1e-9:
        # second-order series, accurate and stable near zero
        return np.eye(3) + K + 0.5 * (K @ K)
    s = np.sin(angle) / angle
    c = (1.0 - np.cos(angle)) / (angle * angle)
    return np.eye(3) + s * K + c * (K @ K)


def log_so3(R: np.ndarray) -> np.ndarray:
    """Rotation matrix -> rotation vector (principal branch)."""
    cos_angle = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    angle = np.arccos(cos_angle)
    if angle < 1e-9:
        return np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) * 0.5
    if np.pi - angle < 1e-6:
        # near pi the off-diagonal formula degenerates; use the symmetric part
        A = (R + np.eye(3)) * 0.5
        axis = np.sqrt(np.maximum(np.diag(A), 0.0))
        # fix signs from the largest component
        k = int(np.argmax(axis))
        if axis[k] > 0:
            for i in range(3):
                if i != k and A[k, i] < 0:
                    axis[i] = -axis[i]
        n = np.linalg.norm(axis)
        if n > 0:
            axis = axis / n
        return axis * angle
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return w * (angle / (2.0 * np.sin(angle)))


def left_jacobian_inv_so3(phi: np.ndarray) -> np.ndarray:
    """Inverse of the left Jacobian of SO(3) at rotation vector phi."""
    angle = np.linalg.norm(phi)
    K = hat(phi)
    if angle < 1e-6:
        return np.eye(3) - 0.5 * K + (1.0 / 12.0) * (K @ K)
    half = 0.5 * angle
    cot = half / np.tan(half)
    return np.eye(3) - 0.5 * K + ((1.0 - cot) / (angle * angle)) * (K @ K)


def right_jacobian_inv_so3(phi: np.ndarray) -> np.ndarray:
    """Inverse of the right Jacobian of SO(3) at rotation vector phi."""
    return left_jacobian_inv_so3(-np.asarray(phi))


def quat_normalize(q: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(q)
    if n < _EPS:
        raise ValueError("zero-norm quaternion")
    q = q / n
    # canonical sign keeps serialization deterministic
    if q[0] < 0:
        q = -q
    return q


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rot_to_quat(R: np.ndarray) -> np.ndarray:
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        if i == 0:
            s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
            q = np.array(
                [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
            )
        elif i == 1:
            s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
            q = np.array(
                [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
            )
        else:
            s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
            q = np.array(
                [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
            )
    return quat_normalize(q)


def quat_from_rotvec(phi: np.ndarray) -> np.ndarray:
    angle = np.linalg.norm(phi)
    if angle < 1e-12:
        return quat_normalize(np.array([1.0, phi[0] * 0.5, phi[1] * 0.5, phi[2] * 0.5]))
    axis = phi / angle
    half = 0.5 * angle
    return quat_normalize(np.concatenate(([np.cos(half)], np.sin(half) * axis)))


def quat_from_yaw(yaw: float) -> np.ndarray:
    return np.array([np.cos(yaw * 0.5), 0.0, 0.0, np.sin(yaw * 0.5)])


@dataclass(eq=False)
class Pose:
    """Rigid transform: world position plus unit quaternion orientation."""

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        self.translation = np.asarray(self.translation, dtype=float)
        self.rotation = quat_normalize(np.asarray(self.rotation, dtype=float))
        self._rot = None

    def rot(self) -> np.ndarray:
        # rotation is never mutated in place, so the matrix can be memoized
        if self._rot is None:
            self._rot = quat_to_rot(self.rotation)
        return self._rot

    def compose(self, other: "Pose") -> "Pose":
        """self * other (apply other in self's body frame)."""
        return Pose(
            self.translation + self.rot() @ other.translation,
            quat_mul(self.rotation, other.rotation),
        )

    def inverse(self) -> "Pose":
        qi = quat_conj(self.rotation)
        return Pose(-(quat_to_rot(qi) @ self.translation), qi)

    def relative_to(self, other: "Pose") -> "Pose":
        """other^{-1} * self."""
        return other.inverse().compose(self)

    def transform(self, p: np.ndarray) -> np.ndarray:
        """Body-frame point -> world frame."""
        return self.translation + self.rot() @ np.asarray(p, dtype=float)

    def transform_inverse(self, p: np.ndarray) -> np.ndarray:
        """World-frame point -> body frame."""
        return self.rot().T @ (np.asarray(p, dtype=float) - self.translation)

    def copy(self) -> "Pose":
        return Pose(self.translation.copy(), self.rotation.copy())

    def approx_equal(self, other: "Pose", tol: float = 1e-9) -> bool:
        return (
            np.allclose(self.translation, other.translation, atol=tol)
            and min(
                np.linalg.norm(self.rotation - other.rotation),
                np.linalg.norm(self.rotation + other.rotation),
            )
            < tol
        )
