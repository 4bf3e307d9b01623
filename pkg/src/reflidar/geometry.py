"""Core 3D types, rigid transforms and surface normals from depth images."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .projection import DepthImage, ProjectionConfig, pixel_rays

QUAT_TOL = 1e-9


class Point3(NamedTuple):
    x: float
    y: float
    z: float
    intensity: float = 0.0


@dataclass(frozen=True, eq=False)
class Scan:
    """One LiDAR sweep.

    ``xyz`` is (N, 3) in meters in the sensor frame, ``intensity`` is (N,)
    normalized to [0, 1]. ``times`` holds optional per-point timestamps.
    """

    xyz: np.ndarray
    intensity: np.ndarray
    scan_id: int = 0
    timestamp: float = 0.0
    times: np.ndarray | None = field(default=None)

    def __post_init__(self):
        xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        inten = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
        if xyz.shape[0] != inten.shape[0]:
            raise ValueError(f"xyz has {xyz.shape[0]} points but intensity has {inten.shape[0]}")
        if not np.all(np.isfinite(xyz)):
            raise ValueError("scan coordinates must be finite")
        if inten.size and (inten.min() < 0.0 or inten.max() > 1.0):
            raise ValueError("intensity must be normalized to [0, 1]")
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "intensity", inten)
        if self.times is not None:
            object.__setattr__(self, "times", np.asarray(self.times, dtype=np.float64).reshape(-1))

    def __len__(self):
        return self.xyz.shape[0]

    @property
    def ranges(self):
        return np.sqrt(np.einsum("ij,ij->i", self.xyz, self.xyz))

    def points(self):
        return [Point3(*p, i) for p, i in zip(self.xyz.tolist(), self.intensity.tolist())]


def _quat_to_matrix(qw, qx, qy, qz):
    return np.array(
        [
            [1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qz * qw), 2 * (qx * qz + qy * qw)],
            [2 * (qx * qy + qz * qw), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qx * qw)],
            [2 * (qx * qz - qy * qw), 2 * (qy * qz + qx * qw), 1 - 2 * (qx * qx + qy * qy)],
        ]
    )


def _quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


@dataclass(frozen=True)
class PoseSE3:
    """Rigid transform: unit quaternion ``(qw, qx, qy, qz)`` plus translation in meters."""

    rotation: tuple = (1.0, 0.0, 0.0, 0.0)
    translation: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        q = tuple(float(v) for v in self.rotation)
        t = tuple(float(v) for v in self.translation)
        if len(q) != 4 or len(t) != 3:
            raise ValueError("rotation needs 4 components and translation 3")
        if not all(math.isfinite(v) for v in q + t):
            raise ValueError("pose components must be finite")
        norm = math.sqrt(sum(v * v for v in q))
        if abs(norm - 1.0) > QUAT_TOL:
            raise ValueError(f"rotation quaternion is not unit norm (|q| = {norm!r})")
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_axis_angle(cls, axis, angle, translation=(0.0, 0.0, 0.0)):
        axis = np.asarray(axis, dtype=np.float64)
        n = np.linalg.norm(axis)
        if n == 0.0 or angle == 0.0:
            return cls((1.0, 0.0, 0.0, 0.0), translation)
        ax, ay, az = (axis / n).tolist()
        s = math.sin(0.5 * angle)
        return cls.normalized((math.cos(0.5 * angle), ax * s, ay * s, az * s), translation)

    @classmethod
    def from_yaw(cls, yaw, translation=(0.0, 0.0, 0.0)):
        return cls.from_axis_angle((0.0, 0.0, 1.0), yaw, translation)

    @classmethod
    def normalized(cls, rotation, translation=(0.0, 0.0, 0.0)):
        """Build a pose after renormalizing a nearly-unit quaternion."""
        q = [float(v) for v in rotation]
        norm = math.sqrt(sum(v * v for v in q))
        if norm == 0.0:
            raise ValueError("zero quaternion")
        return cls(tuple(v / norm for v in q), translation)

    def matrix(self):
        return _quat_to_matrix(*self.rotation)

    def as_matrix4(self):
        m = np.eye(4)
        m[:3, :3] = self.matrix()
        m[:3, 3] = self.translation
        return m

    def inverse(self):
        return se3_inverse(self)

    def is_identity(self):
        return self.rotation == (1.0, 0.0, 0.0, 0.0) and self.translation == (0.0, 0.0, 0.0)

    def allclose(self, other, atol=1e-9):
        """Equality up to ``atol``, treating ``q`` and ``-q`` as the same rotation."""
        qa, qb = np.array(self.rotation), np.array(other.rotation)
        dq = min(np.abs(qa - qb).max(), np.abs(qa + qb).max())
        dt = np.abs(np.array(self.translation) - np.array(other.translation)).max()
        return bool(dq <= atol and dt <= atol)


def se3_apply(pose: PoseSE3, p):
    """Apply ``pose`` to a :class:`Point3` or an (..., 3) coordinate array.

    Intensity of a ``Point3`` is carried through unchanged.
    """
    if not isinstance(pose, PoseSE3):
        raise TypeError("pose must be a PoseSE3")
    if isinstance(p, Point3):
        out = se3_apply(pose, np.array([p.x, p.y, p.z]))
        return Point3(float(out[0]), float(out[1]), float(out[2]), p.intensity)
    xyz = np.asarray(p, dtype=np.float64)
    if pose.is_identity():
        return xyz.copy()
    return xyz @ pose.matrix().T + np.asarray(pose.translation)


def se3_compose(a: PoseSE3, b: PoseSE3) -> PoseSE3:
    """Pose equivalent to applying ``b`` first, then ``a``."""
    q = _quat_mul(a.rotation, b.rotation)
    norm = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    q = tuple(v / norm for v in q)
    rb = _quat_to_matrix(*a.rotation) @ np.asarray(b.translation)
    t = (rb[0] + a.translation[0], rb[1] + a.translation[1], rb[2] + a.translation[2])
    return PoseSE3(q, t)


def se3_inverse(pose: PoseSE3) -> PoseSE3:
    qw, qx, qy, qz = pose.rotation
    conj = (qw, -qx, -qy, -qz)
    t = -(_quat_to_matrix(*conj) @ np.asarray(pose.translation))
    return PoseSE3(conj, tuple(t.tolist()))


@dataclass(frozen=True, eq=False)
class NormalImage:
    """Per-pixel unit normals (H, W, 3), validity mask and |cos| of the incidence angle."""

    normals: np.ndarray
    mask: np.ndarray
    cos_alpha: np.ndarray

    @property
    def shape(self):
        return self.mask.shape


def back_project(depth: DepthImage, cfg: ProjectionConfig):
    """3D points (H, W, 3) of every pixel along its pixel-center ray.

    Invalid pixels are NaN.
    """
    rays = pixel_rays(cfg)
    pts = rays * depth.values[..., None]
    pts[~depth.mask] = np.nan
    return pts, rays


def estimate_normals(depth: DepthImage, cfg: ProjectionConfig) -> NormalImage:
    """Normals from central differences of back-projected neighbours.

    A pixel gets a normal only when its full 3x3 neighbourhood is valid.
    Normals are flipped to face the sensor.
    """
    h, w = depth.mask.shape
    if (h, w) != (cfg.height, cfg.width):
        raise ValueError(f"depth image is {w}x{h} but config expects {cfg.width}x{cfg.height}")
    if h < 3 or w < 3:
        return NormalImage(np.zeros((h, w, 3)), np.zeros((h, w), dtype=bool), np.zeros((h, w)))
    n, m, c = kernels.normals(depth.values, depth.mask, pixel_rays(cfg))
    return NormalImage(n, m, c)
