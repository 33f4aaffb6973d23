"""Rigid-body poses, quaternions, and rays.

Conventions used throughout the package: right-handed frames, +Z up,
SI units (meters, radians, seconds, newtons).  Quaternions are unit
length in (w, x, y, z) order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UNIT_TOL = 1e-9


class InvalidPose(ValueError):
    """Raised when a quaternion is not unit length or not finite."""


class InvalidRay(ValueError):
    """Raised when a ray direction is not unit length."""


def _vec(x, n: int) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.shape != (n,):
        raise ValueError(f"expected shape ({n},), got {v.shape}")
    return v


# ---------------------------------------------------------------------------
# quaternion helpers


def quat_multiply(q1, q2) -> np.ndarray:
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_conjugate(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([w, -x, -y, -z])


def quat_rotate(q, v) -> np.ndarray:
    """Rotate vector ``v`` by unit quaternion ``q``."""
    w = q[0]
    u = np.asarray(q[1:], dtype=float)
    v = np.asarray(v, dtype=float)
    # Rodrigues-style expansion; cheaper than building the matrix.
    return v + 2.0 * np.cross(u, np.cross(u, v) + w * v)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = _vec(axis, 3)
    n = np.linalg.norm(axis)
    if n == 0.0:
        raise ValueError("zero rotation axis")
    half = 0.5 * angle
    return np.concatenate(([np.cos(half)], np.sin(half) * axis / n))


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_matrix(R) -> np.ndarray:
    """Unit quaternion for a proper rotation matrix (Shepperd's method)."""
    R = np.asarray(R, dtype=float)
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
            s = np.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2]) * 2.0
            q = np.array(
                [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
            )
        else:
            s = np.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2]) * 2.0
            q = np.array(
                [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
            )
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def quat_angle(q) -> float:
    """Rotation angle (radians, in [0, pi]) represented by ``q``."""
    w = min(1.0, max(-1.0, abs(float(q[0]))))
    return 2.0 * np.arccos(w)


def quat_angle_between(q1, q2) -> float:
    return quat_angle(quat_multiply(quat_conjugate(q1), q2))


def rotvec_from_matrix(R) -> np.ndarray:
    """Axis-angle vector (axis * angle) of a rotation matrix."""
    q = quat_from_matrix(R)
    w = min(1.0, max(-1.0, float(q[0])))
    angle = 2.0 * np.arccos(w)
    s = np.sqrt(max(0.0, 1.0 - w * w))
    if s < 1e-12:
        return q[1:] * 2.0  # small-angle: sin(a/2) ~ a/2
    return q[1:] / s * angle


# ---------------------------------------------------------------------------
# Pose


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform: rotate by ``orientation`` then translate by ``position``."""

    position: np.ndarray
    orientation: np.ndarray  # unit quaternion (w, x, y, z)

    def __post_init__(self):
        p = _vec(self.position, 3).copy()
        q = _vec(self.orientation, 4).copy()
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise InvalidPose("pose components must be finite")
        norm = float(np.linalg.norm(q))
        if abs(norm - 1.0) > UNIT_TOL:
            raise InvalidPose(f"quaternion norm {norm} outside unit tolerance")
        q /= norm
        p.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)

    # -- constructors -------------------------------------------------

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def from_xyz(x: float, y: float, z: float) -> "Pose":
        return Pose(np.array([x, y, z], dtype=float), np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def from_axis_angle(axis, angle: float, position=(0.0, 0.0, 0.0)) -> "Pose":
        return Pose(np.asarray(position, dtype=float), quat_from_axis_angle(axis, angle))

    @staticmethod
    def from_matrix(T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return Pose(T[:3, 3].copy(), quat_from_matrix(T[:3, :3]))

    @staticmethod
    def from_rotation(R, position=(0.0, 0.0, 0.0)) -> "Pose":
        return Pose(np.asarray(position, dtype=float), quat_from_matrix(R))

    # -- operations ----------------------------------------------------

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = quat_to_matrix(self.orientation)
        T[:3, 3] = self.position
        return T

    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def compose(self, other: "Pose") -> "Pose":
        """``self`` applied after ``other``: T_self @ T_other."""
        return Pose(
            self.position + quat_rotate(self.orientation, other.position),
            quat_multiply(self.orientation, other.orientation),
        )

    def inverse(self) -> "Pose":
        qi = quat_conjugate(self.orientation)
        return Pose(-quat_rotate(qi, self.position), qi)

    def transform_point(self, p) -> np.ndarray:
        return self.position + quat_rotate(self.orientation, p)

    def transform_direction(self, d) -> np.ndarray:
        return quat_rotate(self.orientation, d)

    def approx_equal(self, other: "Pose", pos_tol: float = 1e-9, ang_tol: float = 1e-9) -> bool:
        return (
            float(np.linalg.norm(self.position - other.position)) <= pos_tol
            and quat_angle_between(self.orientation, other.orientation) <= ang_tol
        )

    def to_dict(self) -> dict:
        return {
            "position": [float(v) for v in self.position],
            "orientation": [float(v) for v in self.orientation],
        }

    @staticmethod
    def from_dict(d: dict) -> "Pose":
        return Pose(np.asarray(d["position"], dtype=float), np.asarray(d["orientation"], dtype=float))


def compose_pose(a: Pose, b: Pose) -> Pose:
    """Pose of ``b`` expressed after applying ``a`` (matrix product a·b)."""
    return a.compose(b)


@dataclass(frozen=True, eq=False)
class Ray:
    """Half line with unit direction."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = _vec(self.origin, 3).copy()
        d = _vec(self.direction, 3).copy()
        n = float(np.linalg.norm(d))
        if abs(n - 1.0) > UNIT_TOL:
            raise InvalidRay(f"ray direction norm {n} outside unit tolerance")
        d /= n
        o.flags.writeable = False
        d.flags.writeable = False
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def point_at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    out = (a + np.pi) % (2.0 * np.pi) - np.pi
    if out == -np.pi:
        out = np.pi
    return float(out)
