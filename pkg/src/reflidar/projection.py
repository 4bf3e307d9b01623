"""Point cloud to image projection: panoramic spherical and virtual camera."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, replace

import numpy as np

from . import kernels

PANORAMIC = "panoramic"
VIRTUAL_CAMERA = "virtual_camera"
MODES = (PANORAMIC, VIRTUAL_CAMERA)

# vertical FoV of the sensor is 59 deg; bounds assumed symmetric
DEFAULT_PHI = math.radians(29.5)


@dataclass(frozen=True)
class ProjectionConfig:
    """Image geometry. Angles are radians."""

    mode: str = PANORAMIC
    width: int = 1380
    height: int = 240
    phi_min: float = -DEFAULT_PHI
    phi_max: float = DEFAULT_PHI
    horizontal_fov: float = math.pi / 2
    camera_yaw: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown projection mode {self.mode!r}; expected one of {MODES}")
        if int(self.width) != self.width or int(self.height) != self.height:
            raise ValueError("width and height must be integers")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if self.width < 1 or self.height < 1:
            raise ValueError("width and height must be >= 1")
        if not self.phi_min < self.phi_max:
            raise ValueError("phi_min must be below phi_max")
        if not 0.0 < self.horizontal_fov < math.pi:
            raise ValueError("horizontal_fov must lie in (0, pi)")

    @classmethod
    def panoramic(cls, width=1380, height=240, phi_min_deg=-29.5, phi_max_deg=29.5):
        return cls(PANORAMIC, width, height, math.radians(phi_min_deg), math.radians(phi_max_deg))

    @classmethod
    def virtual_camera(cls, width=480, height=240, phi_min_deg=-29.5, phi_max_deg=29.5, hfov_deg=90.0, yaw_deg=0.0):
        return cls(
            VIRTUAL_CAMERA,
            width,
            height,
            math.radians(phi_min_deg),
            math.radians(phi_max_deg),
            math.radians(hfov_deg),
            math.radians(yaw_deg),
        )

    @property
    def shape(self):
        return (self.height, self.width)

    @property
    def fx(self):
        return self.width / (2.0 * math.tan(self.horizontal_fov / 2.0))

    @property
    def cx(self):
        return self.width / 2.0

    def to_dict(self):
        return {
            "mode": self.mode,
            "width": self.width,
            "height": self.height,
            "phi_min_deg": math.degrees(self.phi_min),
            "phi_max_deg": math.degrees(self.phi_max),
            "hfov_deg": math.degrees(self.horizontal_fov),
            "camera_yaw_deg": math.degrees(self.camera_yaw),
        }

    KEYS = ("mode", "width", "height", "phi_min_deg", "phi_max_deg", "hfov_deg", "camera_yaw_deg")

    @classmethod
    def from_dict(cls, d):
        unknown = sorted(set(d) - set(cls.KEYS))
        if unknown:
            raise ValueError(f"unknown projection key(s): {', '.join(unknown)}")
        return cls(
            mode=d.get("mode", PANORAMIC),
            width=d.get("width", 1380),
            height=d.get("height", 240),
            phi_min=math.radians(d.get("phi_min_deg", -29.5)),
            phi_max=math.radians(d.get("phi_max_deg", 29.5)),
            horizontal_fov=math.radians(d.get("hfov_deg", 90.0)),
            camera_yaw=math.radians(d.get("camera_yaw_deg", 0.0)),
        )


@dataclass(frozen=True, eq=False)
class _Image:
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        m = np.asarray(self.mask, dtype=bool)
        if v.ndim != 2 or v.shape != m.shape:
            raise ValueError(f"values {v.shape} and mask {m.shape} must be equal 2D shapes")
        object.__setattr__(self, "values", np.where(m, v, 0.0))
        object.__setattr__(self, "mask", m)

    @property
    def shape(self):
        return self.mask.shape

    @property
    def width(self):
        return self.mask.shape[1]

    @property
    def height(self):
        return self.mask.shape[0]

    def valid_fraction(self):
        return float(self.mask.mean())

    def equals(self, other):
        return (
            type(self) is type(other)
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.values, other.values)
        )

    @classmethod
    def empty(cls, shape):
        return cls(np.zeros(shape), np.zeros(shape, dtype=bool))


class ReflectanceImage(_Image):
    """Intensity grid in [0, 1]; zero where invalid."""

    def __post_init__(self):
        super().__post_init__()
        v = self.values[self.mask]
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ValueError("reflectance values must lie in [0, 1]")


class DepthImage(_Image):
    """Range grid in meters; zero where invalid."""

    def __post_init__(self):
        super().__post_init__()
        v = self.values[self.mask]
        if v.size and not (np.all(np.isfinite(v)) and v.min() > 0.0):
            raise ValueError("valid depth values must be finite and positive")


def _scatter(rows, cols, rng, inten, keep, cfg):
    h, w = cfg.height, cfg.width
    keep = keep & (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    pix = (rows[keep] * w + cols[keep]).astype(np.int64)
    depth, val = kernels.zbuffer(pix, np.ascontiguousarray(rng[keep]), np.ascontiguousarray(inten[keep]), h * w)
    mask = np.isfinite(depth).reshape(h, w)
    depth = np.where(mask, depth.reshape(h, w), 0.0)
    val = val.reshape(h, w)
    return ReflectanceImage(val, mask), DepthImage(depth, mask.copy())


def _as_arrays(xyz, intensity):
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    inten = np.asarray(intensity, dtype=np.float64).reshape(-1)
    if inten.shape[0] != xyz.shape[0]:
        raise ValueError("xyz and intensity lengths differ")
    return xyz, inten


def panoramic_indices(xyz, cfg: ProjectionConfig):
    """Integer (row, col) pixel indices and FoV flag for the spherical model."""
    # y + 0.0 turns -0.0 into +0.0 so theta stays in (-180, 180]
    x, y, z = xyz[:, 0], xyz[:, 1] + 0.0, xyz[:, 2]
    theta = np.degrees(np.arctan2(y, x))
    phi = np.arctan2(z, np.sqrt(x * x + y * y))
    col = np.floor((-theta + 180.0) / 360.0 * cfg.width)
    row = np.floor((cfg.phi_max - phi) / (cfg.phi_max - cfg.phi_min) * cfg.height)
    in_fov = (phi >= cfg.phi_min) & (phi <= cfg.phi_max)
    return row.astype(np.int64), col.astype(np.int64), in_fov


def camera_indices(xyz, cfg: ProjectionConfig, owned=None):
    """(row, col, projectable) for the virtual camera at ``cfg.camera_yaw``.

    Points are first rotated by ``-camera_yaw`` so the camera looks along +x.
    ``owned`` (from :func:`view_owner`) replaces the strict azimuth test
    when the horizontal FoV is at least 90 degrees, so views sharing a
    border never both claim, or both miss, a point on it.
    """
    c, s = math.cos(cfg.camera_yaw), math.sin(cfg.camera_yaw)
    x0, y0, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    if cfg.camera_yaw == 0.0:
        x, y = x0, y0
    else:
        x = c * x0 + s * y0
        y = -s * x0 + c * y0
    half = cfg.horizontal_fov / 2.0
    front = x > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        inside = np.abs(np.arctan2(y, x)) < half
        if owned is not None:
            inside = owned if half >= math.pi / 4 else owned & inside
        ok = front & inside
        xs = np.where(ok, x, 1.0)
        col = np.floor(-cfg.fx * (np.where(ok, y, 0.0) / xs) + cfg.cx)
        row = np.floor(cfg.height - 1 - (np.arctan2(z, xs) - cfg.phi_min) / (cfg.phi_max - cfg.phi_min) * cfg.height)
    return row.astype(np.int64), col.astype(np.int64), ok


def project_panoramic(xyz, intensity, cfg: ProjectionConfig):
    """Spherical projection to (ReflectanceImage, DepthImage); nearest range wins."""
    if cfg.mode != PANORAMIC:
        raise ValueError("project_panoramic needs a panoramic config")
    xyz, inten = _as_arrays(xyz, intensity)
    if xyz.shape[0] == 0:
        return ReflectanceImage.empty(cfg.shape), DepthImage.empty(cfg.shape)
    rng = np.sqrt(np.einsum("ij,ij->i", xyz, xyz))
    row, col, ok = panoramic_indices(xyz, cfg)
    return _scatter(row, col, rng, inten, ok & (rng > 0), cfg)


def project_virtual_camera(xyz, intensity, cfg: ProjectionConfig, *, owned=None):
    """Pinhole-column / elevation-row projection for one virtual camera."""
    if cfg.mode != VIRTUAL_CAMERA:
        raise ValueError("project_virtual_camera needs a virtual_camera config")
    xyz, inten = _as_arrays(xyz, intensity)
    if xyz.shape[0] == 0:
        return ReflectanceImage.empty(cfg.shape), DepthImage.empty(cfg.shape)
    rng = np.sqrt(np.einsum("ij,ij->i", xyz, xyz))
    row, col, ok = camera_indices(xyz, cfg, owned)
    return _scatter(row, col, rng, inten, ok, cfg)


VIEW_YAWS_DEG = (0.0, 90.0, 180.0, 270.0)


def four_view_configs(base_cfg: ProjectionConfig):
    return [replace(base_cfg, camera_yaw=math.radians(yaw)) for yaw in VIEW_YAWS_DEG]


def view_owner(xyz):
    """Index 0..3 of the 90-degree sector each point falls in.

    View ``k`` owns azimuths in ``(90k - 45, 90k + 45]`` degrees, so a point
    on a shared border goes to the lower-yaw view (the -45 border belongs
    to view 3, whose sector wraps through 315).
    """
    theta = np.degrees(np.arctan2(xyz[:, 1] + 0.0, xyz[:, 0]))
    return (np.ceil((theta - 45.0) / 90.0).astype(np.int64)) % 4


def project_four_views(xyz, intensity, base_cfg: ProjectionConfig):
    """Four cameras at yaw 0, 90, 180 and 270 degrees; each point goes to at most one."""
    if base_cfg.mode != VIRTUAL_CAMERA:
        raise ValueError("project_four_views needs a virtual_camera config")
    xyz, inten = _as_arrays(xyz, intensity)
    owner = view_owner(xyz)
    return [project_virtual_camera(xyz, inten, c, owned=owner == k) for k, c in enumerate(four_view_configs(base_cfg))]


def project(xyz, intensity, cfg: ProjectionConfig):
    """Dispatch on ``cfg.mode``."""
    if cfg.mode == PANORAMIC:
        return project_panoramic(xyz, intensity, cfg)
    return project_virtual_camera(xyz, intensity, cfg)


def pixel_rays(cfg: ProjectionConfig):
    """Unit ray directions (H, W, 3) through pixel centers, sensor frame.

    The array is cached per config and read-only.
    """
    return _pixel_rays(cfg)


@functools.lru_cache(maxsize=32)
def _pixel_rays(cfg):
    d = _compute_rays(cfg)
    d.flags.writeable = False
    return d


def _compute_rays(cfg):
    h, w = cfg.height, cfg.width
    rows = np.arange(h) + 0.5
    cols = np.arange(w) + 0.5
    span = cfg.phi_max - cfg.phi_min
    if cfg.mode == PANORAMIC:
        theta = np.radians(180.0 - cols / w * 360.0)
        phi = cfg.phi_max - rows / h * span
        cp = np.cos(phi)[:, None]
        d = np.stack(
            [cp * np.cos(theta)[None, :], cp * np.sin(theta)[None, :], np.broadcast_to(np.sin(phi)[:, None], (h, w))],
            axis=-1,
        )
        return d
    # invert col = -fx*y/x + cx and row = H-1 - (elev - phi_min)/span*H at pixel centers
    yx = (cfg.cx - cols) / cfg.fx
    elev = cfg.phi_min + (h - 1 - rows) / h * span
    d = np.stack(
        [np.ones((h, w)), np.broadcast_to(yx[None, :], (h, w)), np.broadcast_to(np.tan(elev)[:, None], (h, w))],
        axis=-1,
    )
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    if cfg.camera_yaw != 0.0:
        c, s = math.cos(cfg.camera_yaw), math.sin(cfg.camera_yaw)
        x, y = d[..., 0].copy(), d[..., 1].copy()
        d[..., 0] = c * x - s * y
        d[..., 1] = s * x + c * y
    return d
