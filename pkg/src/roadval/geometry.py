"""Vectors, unit quaternions, rigid transforms and pinhole projection.

Conventions
-----------
* Quaternions are Hamilton, stored ``(w, x, y, z)``, and rotate actively:
  ``quat_rotate(q, v) = q v q*``.
* ``RigidTransform(rotation, translation)`` maps a point ``p`` given in the
  source frame to ``R p + t`` in the target frame.
* Camera frames have ``z`` along the optical axis, ``x`` right and ``y`` down.

Points are plain ``numpy`` arrays of shape ``(3,)`` or ``(N, 3)``; every
operation that accepts one also accepts the other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, InvalidRotationError

UNIT_TOL = 1e-9


def vec3(x: float, y: float, z: float) -> np.ndarray:
    v = np.array([x, y, z], dtype=float)
    if not np.all(np.isfinite(v)):
        raise DomainError(f"non-finite vector {v!r}")
    return v


@dataclass(frozen=True)
class Quaternion:
    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        for name in "wxyz":
            object.__setattr__(self, name, float(getattr(self, name)))
        comps = (self.w, self.x, self.y, self.z)
        if not all(math.isfinite(c) for c in comps):
            raise InvalidRotationError(f"non-finite quaternion {comps}")
        n = math.sqrt(sum(c * c for c in comps))
        if abs(n - 1.0) > UNIT_TOL:
            raise InvalidRotationError(f"quaternion norm {n!r} is not unit")

    @classmethod
    def normalized(cls, w: float, x: float, y: float, z: float) -> "Quaternion":
        n = math.sqrt(w * w + x * x + y * y + z * z)
        if not math.isfinite(n) or n == 0.0:
            raise InvalidRotationError(f"cannot normalise quaternion {(w, x, y, z)}")
        return cls(w / n, x / n, y / n, z / n)

    @classmethod
    def identity(cls) -> "Quaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_axis_angle(cls, axis: Sequence[float], angle: float) -> "Quaternion":
        a = np.asarray(axis, dtype=float)
        n = float(np.linalg.norm(a))
        if n == 0.0:
            raise DomainError("zero rotation axis")
        s = math.sin(angle / 2.0) / n
        return cls.normalized(math.cos(angle / 2.0), a[0] * s, a[1] * s, a[2] * s)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Quaternion":
        """Shepperd's method; picks the largest pivot for stability."""
        m = np.asarray(m, dtype=float)
        tr = m[0, 0] + m[1, 1] + m[2, 2]
        if tr > 0:
            s = 2.0 * math.sqrt(tr + 1.0)
            w, x, y, z = 0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
            w, x, y, z = (m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s
        elif m[1, 1] > m[2, 2]:
            s = 2.0 * math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
            w, x, y, z = (m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s
        else:
            s = 2.0 * math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
            w, x, y, z = (m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s
        return cls.normalized(w, x, y, z)

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.w, self.x, self.y, self.z)

    def conjugate(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        w1, x1, y1, z1 = self.as_tuple()
        w2, x2, y2, z2 = other.as_tuple()
        return Quaternion.normalized(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def angle(self) -> float:
        """Rotation angle in ``[0, pi]``."""
        return 2.0 * math.atan2(float(np.linalg.norm(self.vector)), abs(self.w))

    def yaw(self) -> float:
        w, x, y, z = self.as_tuple()
        return math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))

    def as_matrix(self) -> np.ndarray:
        w, x, y, z = self.as_tuple()
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def power(self, fraction: float) -> "Quaternion":
        """Shortest-path fractional rotation ``q**fraction``."""
        w, v = self.w, self.vector
        if w < 0.0:
            w, v = -w, -v
        s = float(np.linalg.norm(v))
        if s < 1e-300:
            return Quaternion.identity()
        half = math.atan2(s, w) * fraction
        k = math.sin(half) / s
        return Quaternion.normalized(math.cos(half), v[0] * k, v[1] * k, v[2] * k)


def _as_quaternion(q) -> Quaternion:
    if isinstance(q, Quaternion):
        return q
    w, x, y, z = (float(c) for c in q)
    return Quaternion(w, x, y, z)


def quat_rotate(q, v) -> np.ndarray:
    """Rotate ``v`` (``(3,)`` or ``(N, 3)``) by the unit quaternion ``q``.

    Raises :class:`InvalidRotationError` for a quaternion that is not unit
    within ``1e-9``.
    """
    q = _as_quaternion(q)
    v = np.asarray(v, dtype=float)
    u = (q.x, q.y, q.z)
    uv = _cross(u, v)
    return v + 2.0 * (q.w * uv + _cross(u, uv))


def _cross(u, v: np.ndarray) -> np.ndarray:
    # np.cross carries a lot of per-call overhead for single vectors
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    return np.stack((u[1] * z - u[2] * y, u[2] * x - u[0] * z, u[0] * y - u[1] * x), axis=-1)


def slerp(q0: Quaternion, q1: Quaternion, fraction: float) -> Quaternion:
    if fraction == 0.0:
        return q0
    if fraction == 1.0:
        return q1
    return q0 * (q0.conjugate() * q1).power(fraction)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: Quaternion
    translation: np.ndarray

    def __post_init__(self):
        t = np.array(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise DomainError(f"non-finite translation {t!r}")
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)
        if not isinstance(self.rotation, Quaternion):
            object.__setattr__(self, "rotation", _as_quaternion(self.rotation))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(Quaternion.identity(), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "RigidTransform":
        m = np.asarray(m, dtype=float)
        return cls(Quaternion.from_matrix(m[:3, :3]), m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.as_matrix()
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        return transform_point(self, points)

    def inverse(self) -> "RigidTransform":
        return inverse(self)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def __repr__(self) -> str:
        return f"RigidTransform(rotation={self.rotation!r}, translation={self.translation.tolist()!r})"


def transform_point(t: RigidTransform, v) -> np.ndarray:
    return quat_rotate(t.rotation, v) + t.translation


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """``compose(a, b)`` applies ``b`` first, then ``a``."""
    return RigidTransform(a.rotation * b.rotation, quat_rotate(a.rotation, b.translation) + a.translation)


def inverse(t: RigidTransform) -> RigidTransform:
    qi = t.rotation.conjugate()
    return RigidTransform(qi, -quat_rotate(qi, t.translation))


def interpolate(t: RigidTransform, fraction: float) -> RigidTransform:
    """Fraction of ``t``: linear in translation, spherical from identity in rotation."""
    if not 0.0 <= fraction <= 1.0:
        raise DomainError(f"interpolation fraction {fraction!r} outside [0, 1]")
    if fraction == 1.0:
        return t
    if fraction == 0.0:
        return RigidTransform.identity()
    return RigidTransform(t.rotation.power(fraction), t.translation * fraction)


def interpolate_many(t: RigidTransform, fractions: np.ndarray):
    """Vectorised :func:`interpolate` returning per-fraction rotation matrices and translations."""
    f = np.asarray(fractions, dtype=float)
    if f.size and (f.min() < 0.0 or f.max() > 1.0):
        raise DomainError("interpolation fraction outside [0, 1]")
    w, v = t.rotation.w, t.rotation.vector
    if w < 0.0:
        w, v = -w, -v
    s = float(np.linalg.norm(v))
    if s < 1e-300:
        quats = np.zeros((f.size, 4))
        quats[:, 0] = 1.0
    else:
        half = math.atan2(s, w) * f
        quats = np.empty((f.size, 4))
        quats[:, 0] = np.cos(half)
        quats[:, 1:] = (np.sin(half) / s)[:, None] * v[None, :]
    # endpoints reproduce interpolate() exactly
    quats[f == 1.0] = t.rotation.as_tuple()
    trans = f[:, None] * t.translation[None, :]
    trans[f == 1.0] = t.translation
    return quats, trans


def quat_rotate_many(quats: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate row ``i`` of ``v`` by quaternion row ``i`` of ``quats``."""
    w = quats[:, :1]
    u = quats[:, 1:]
    uv = np.cross(u, v)
    return v + 2.0 * (w * uv + np.cross(u, uv))


@dataclass(frozen=True)
class Pixel:
    u: float
    v: float


@dataclass(frozen=True, eq=False)
class CameraModel:
    fx: float
    fy: float
    ox: float
    oy: float
    width: int
    height: int
    extrinsic: RigidTransform

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DomainError("focal lengths must be positive")
        if not (0 < self.ox < self.width and 0 < self.oy < self.height):
            raise DomainError("principal point must lie inside the image")

    def scaled(self, width: int, height: int) -> "CameraModel":
        """Same camera with intrinsics rescaled to a ``width x height`` image."""
        sx = width / self.width
        sy = height / self.height
        return CameraModel(self.fx * sx, self.fy * sy, self.ox * sx, self.oy * sy, width, height, self.extrinsic)

    def with_extrinsic(self, extrinsic: RigidTransform) -> "CameraModel":
        return CameraModel(self.fx, self.fy, self.ox, self.oy, self.width, self.height, extrinsic)

    def intrinsic_matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.ox, 0.0], [0.0, self.fy, self.oy, 0.0], [0.0, 0.0, 1.0, 0.0]])


def project(cam: CameraModel, p_lidar) -> Pixel | None:
    """Pinhole projection; ``None`` marks a point at or behind the image plane."""
    xc, yc, zc = transform_point(cam.extrinsic, p_lidar)
    if zc <= 0.0:
        return None
    return Pixel(cam.fx * xc / zc + cam.ox, cam.fy * yc / zc + cam.oy)


def project_many(cam: CameraModel, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`project`: returns ``(uv, in_front)``; ``uv`` is NaN where not in front."""
    pc = transform_point(cam.extrinsic, np.asarray(points, dtype=float).reshape(-1, 3))
    front = pc[:, 2] > 0.0
    uv = np.full((pc.shape[0], 2), np.nan)
    z = pc[front, 2]
    uv[front, 0] = cam.fx * pc[front, 0] / z + cam.ox
    uv[front, 1] = cam.fy * pc[front, 1] / z + cam.oy
    return uv, front


def rot_x(a: float) -> Quaternion:
    return Quaternion.from_axis_angle((1.0, 0.0, 0.0), a)


def rot_y(a: float) -> Quaternion:
    return Quaternion.from_axis_angle((0.0, 1.0, 0.0), a)


def rot_z(a: float) -> Quaternion:
    return Quaternion.from_axis_angle((0.0, 0.0, 1.0), a)
