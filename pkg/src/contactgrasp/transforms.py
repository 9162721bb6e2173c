"""Quaternion and rigid-transform helpers.

Quaternions are numpy arrays in scalar-first order ``(w, x, y, z)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("zero-norm quaternion")
    return q / n


def quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q):
    q = np.asarray(q, dtype=float)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q):
    w, x, y, z = quat_normalize(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(m):
    """Rotation matrix to unit quaternion with ``w >= 0`` (Shepperd's method)."""
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = np.array([(m[2, 1] - m[1, 2]) / s, 0.25 * s,
                      (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = np.array([(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s,
                      0.25 * s, (m[1, 2] + m[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = np.array([(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s, 0.25 * s])
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def axis_angle_quat(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[np.cos(angle / 2.0)], np.sin(angle / 2.0) * axis])


def rotation_between(a, b):
    """Shortest-arc rotation matrix taking unit vector ``a`` onto unit vector ``b``."""
    a = np.asarray(a, dtype=float) / np.linalg.norm(a)
    b = np.asarray(b, dtype=float) / np.linalg.norm(b)
    c = float(np.dot(a, b))
    if c > 1.0 - 1e-12:
        return np.eye(3)
    if c < -1.0 + 1e-12:
        # any axis perpendicular to a
        perp = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(perp) < 1e-6:
            perp = np.cross(a, [0.0, 1.0, 0.0])
        return quat_to_matrix(axis_angle_quat(perp, np.pi))
    v = np.cross(a, b)
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + vx + vx @ vx * (1.0 / (1.0 + c))


def random_quaternion(rng):
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def frame_from_axes(x_axis, z_axis):
    """Right-handed rotation matrix with the given x and z columns (z is orthogonalised)."""
    x = np.asarray(x_axis, dtype=float)
    x = x / np.linalg.norm(x)
    z = np.asarray(z_axis, dtype=float)
    z = z - np.dot(z, x) * x
    z = z / np.linalg.norm(z)
    y = np.cross(z, x)
    return np.column_stack([x, y, z])


@dataclass(frozen=True)
class Transform:
    """Rigid transform ``p_parent = R p_child + t``."""

    rotation: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=float).reshape(4)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise ValueError(f"rotation is not a unit quaternion (|q| = {np.linalg.norm(q)})")
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=float).reshape(3))

    @classmethod
    def from_matrix(cls, m, tol=1e-6):
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got shape {m.shape}")
        r = m[:3, :3]
        if (not np.allclose(r @ r.T, np.eye(3), atol=tol) or abs(np.linalg.det(r) - 1.0) > tol
                or not np.allclose(m[3], [0, 0, 0, 1], atol=tol)):
            raise ValueError("matrix is not a rigid transform")
        return cls(matrix_to_quat(r), m[:3, 3])

    @classmethod
    def from_rt(cls, rot_matrix, translation):
        return cls(matrix_to_quat(rot_matrix), translation)

    @property
    def R(self):
        return quat_to_matrix(self.rotation)

    def as_matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.R
        m[:3, 3] = self.translation
        return m

    def apply(self, points):
        points = np.asarray(points, dtype=float)
        return points @ self.R.T + self.translation

    def apply_vector(self, vectors):
        return np.asarray(vectors, dtype=float) @ self.R.T

    def inverse(self):
        r_inv = self.R.T
        return Transform(quat_conj(self.rotation), -r_inv @ self.translation)

    def __matmul__(self, other: "Transform") -> "Transform":
        q = quat_mul(self.rotation, other.rotation)
        return Transform(q / np.linalg.norm(q), self.apply(other.translation))

    def to_dict(self):
        return {"rotation": [float(v) for v in self.rotation],
                "translation": [float(v) for v in self.translation]}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["rotation"], dtype=float), np.array(d["translation"], dtype=float))
