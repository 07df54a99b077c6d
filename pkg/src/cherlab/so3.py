"""Small rotation helpers shared across the package."""

from __future__ import annotations

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap_angle(angle):
    """Wrap angles into (-pi, pi]; exactly +/-pi maps to +pi."""
    a = np.asarray(angle, dtype=float)
    wrapped = -(np.mod(-a + np.pi, TWO_PI) - np.pi)
    # in-range values pass through untouched so wrapping is idempotent bit for bit
    return np.where((a > -np.pi) & (a <= np.pi), a, wrapped)


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def rodrigues(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rotation matrix for a rotation of ``angle`` about ``axis``."""
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0.0:
        return np.eye(3)
    k = skew(axis / n)
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def rot_x(a: float) -> np.ndarray:
    return rodrigues(np.array([1.0, 0.0, 0.0]), a)


def rot_y(a: float) -> np.ndarray:
    return rodrigues(np.array([0.0, 1.0, 0.0]), a)


def rot_z(a: float) -> np.ndarray:
    return rodrigues(np.array([0.0, 0.0, 1.0]), a)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) to rotation matrix."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
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


def quat_from_rotvec(rv: np.ndarray) -> np.ndarray:
    angle = np.linalg.norm(rv)
    if angle < 1e-12:
        q = np.array([1.0, 0.5 * rv[0], 0.5 * rv[1], 0.5 * rv[2]])
        return q / np.linalg.norm(q)
    axis = rv / angle
    return np.concatenate([[np.cos(0.5 * angle)], np.sin(0.5 * angle) * axis])


def quat_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Geodesic angle (rad) between two unit quaternions."""
    d = abs(float(np.dot(a, b)))
    return 2.0 * float(np.arccos(min(1.0, d)))


def project_to_rotation(m: np.ndarray) -> np.ndarray:
    """Closest proper rotation to ``m`` in the Frobenius sense."""
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt
