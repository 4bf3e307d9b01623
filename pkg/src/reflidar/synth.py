"""Synthetic non-repeating-scan LiDAR.

A two-frequency rosette drives ray directions; rays are cast against
planes and boxes of known reflectance and the return intensity follows the
same forward model the compensation inverts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .compensation import CalibSet, EtaConstants, forward_intensity
from .geometry import PoseSE3, Scan, se3_apply
from .projection import DepthImage, ProjectionConfig, ReflectanceImage, pixel_rays

MIN_PERIOD_SCANS = 500
_EPS = 1e-9


@dataclass(frozen=True)
class ScenePrimitive:
    """A finite plane (local z = 0, normal +z) or a box, placed by ``pose``.

    ``extent`` holds half sizes: (x, y) for planes, (x, y, z) for boxes.
    """

    kind: str
    pose: PoseSE3 = field(default_factory=PoseSE3)
    extent: tuple = (1.0, 1.0)
    rho: float = 0.5

    def __post_init__(self):
        if self.kind not in ("plane", "box"):
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        n = 2 if self.kind == "plane" else 3
        ext = np.broadcast_to(np.asarray(self.extent, dtype=np.float64), (n,))
        if not np.all(ext > 0):
            raise ValueError("extent must be > 0")
        object.__setattr__(self, "extent", tuple(float(e) for e in ext))
        if not 0 < self.rho <= 1:
            raise ValueError("rho must lie in (0, 1]")

    @classmethod
    def plane(cls, point, normal, extent=math.inf, rho=0.5, up=(0.0, 0.0, 1.0)):
        """Plane through ``point`` with unit ``normal``; local x axis is kept horizontal when possible."""
        n = np.asarray(normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        up = np.asarray(up, dtype=np.float64)
        ax = np.cross(up, n)
        if np.linalg.norm(ax) < 1e-9:
            ax = np.cross((1.0, 0.0, 0.0), n)
        ax = ax / np.linalg.norm(ax)
        ay = np.cross(n, ax)
        rot = np.stack([ax, ay, n], axis=1)
        return cls("plane", PoseSE3.normalized(_matrix_to_quat(rot), tuple(np.asarray(point, float).tolist())), extent, rho)

    @classmethod
    def box(cls, center, half_extent, rho=0.5, yaw=0.0):
        return cls("box", PoseSE3.from_yaw(yaw, tuple(float(c) for c in center)), half_extent, rho)

    def to_dict(self):
        return {
            "kind": self.kind,
            "translation": list(self.pose.translation),
            "rotation": list(self.pose.rotation),
            "extent": [e if math.isfinite(e) else "inf" for e in self.extent],
            "rho": self.rho,
        }

    @classmethod
    def from_dict(cls, d):
        known = {"kind", "translation", "rotation", "extent", "rho", "normal", "yaw_deg"}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown primitive key(s): {', '.join(unknown)}")
        extent = [float(e) for e in np.atleast_1d(d.get("extent", 1.0))]
        rho = float(d.get("rho", 0.5))
        t = d.get("translation", [0.0, 0.0, 0.0])
        if d["kind"] == "plane" and "normal" in d:
            return cls.plane(t, d["normal"], extent, rho)
        if "yaw_deg" in d:
            pose = PoseSE3.from_yaw(math.radians(d["yaw_deg"]), tuple(t))
        else:
            pose = PoseSE3.normalized(d.get("rotation", [1.0, 0.0, 0.0, 0.0]), tuple(t))
        return cls(d["kind"], pose, extent, rho)


def _matrix_to_quat(m):
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        return (0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s)
    i = int(np.argmax(np.diag(m)))
    if i == 0:
        s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        return ((m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s)
    if i == 1:
        s = 2.0 * math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        return ((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s)
    s = 2.0 * math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
    return ((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s)


@dataclass(frozen=True)
class RosetteConfig:
    rate_hz: float = 10.0
    points_per_scan: int = 20000
    f1: float = 97.3
    f2: float = 13.71
    vfov: float = math.radians(59.0)
    phase0: float = 0.0
    az_amplitude: float = 0.5

    def __post_init__(self):
        if not self.rate_hz > 0:
            raise ValueError("rate_hz must be > 0")
        if self.points_per_scan < 1:
            raise ValueError("points_per_scan must be >= 1")
        if self.f1 == self.f2:
            raise ValueError("f1 and f2 must differ")
        if not 0 < self.vfov < math.pi:
            raise ValueError("vfov must lie in (0, pi)")
        period = self.repeat_period_scans()
        if period is not None and period <= MIN_PERIOD_SCANS:
            raise ValueError(
                f"f1={self.f1}, f2={self.f2} repeat every {period:g} scans; need more than {MIN_PERIOD_SCANS}"
            )

    def repeat_period_scans(self):
        """Scans until the (azimuth, elevation) pattern repeats; ``None`` if effectively never."""
        a = Fraction(repr(float(self.f1)))
        b = Fraction(repr(float(self.f2)))
        if a == 0 or b == 0:
            return None
        # smallest t with a*t and b*t both integers
        num = math.gcd(a.numerator * b.denominator, b.numerator * a.denominator)
        den = a.denominator * b.denominator
        period_s = den / num
        return period_s * self.rate_hz

    def to_dict(self):
        return {
            "rate_hz": self.rate_hz,
            "points_per_scan": self.points_per_scan,
            "f1": self.f1,
            "f2": self.f2,
            "vfov_deg": math.degrees(self.vfov),
            "phase0": self.phase0,
            "az_amplitude": self.az_amplitude,
        }

    @classmethod
    def from_dict(cls, d):
        known = {"rate_hz", "points_per_scan", "f1", "f2", "vfov_deg", "phase0", "az_amplitude"}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown rosette key(s): {', '.join(unknown)}")
        base = cls()
        return cls(
            rate_hz=float(d.get("rate_hz", base.rate_hz)),
            points_per_scan=int(d.get("points_per_scan", base.points_per_scan)),
            f1=float(d.get("f1", base.f1)),
            f2=float(d.get("f2", base.f2)),
            vfov=math.radians(float(d.get("vfov_deg", math.degrees(base.vfov)))),
            phase0=float(d.get("phase0", base.phase0)),
            az_amplitude=float(d.get("az_amplitude", base.az_amplitude)),
        )


def rosette_times(cfg: RosetteConfig, scan_index, n=None):
    n = cfg.points_per_scan if n is None else n
    if n < 1:
        raise ValueError("n must be >= 1")
    k = np.arange(n, dtype=np.float64)
    return (scan_index * n + k) / (n * cfg.rate_hz)


def rosette_directions(cfg: RosetteConfig, scan_index, n=None):
    """Unit direction vectors (n, 3) of scan ``scan_index``."""
    t = rosette_times(cfg, scan_index, n)
    w2 = 2.0 * math.pi * cfg.f2 * t
    az = 2.0 * math.pi * (cfg.f1 * t + cfg.phase0) + cfg.az_amplitude * np.sin(w2)
    el = 0.5 * cfg.vfov * np.sin(w2 + cfg.phase0)
    ce = np.cos(el)
    return np.stack([ce * np.cos(az), ce * np.sin(az), np.sin(el)], axis=1)


@dataclass(frozen=True)
class Hit:
    R: float
    cos_alpha: float
    rho: float
    primitive: int


def raycast_many(scene, origin, dirs):
    """Nearest positive hit per ray.

    Returns ``(t, cos_alpha, rho, primitive)``; misses have ``t = inf`` and
    ``primitive = -1``.
    """
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    origin = np.asarray(origin, dtype=np.float64).reshape(3)
    n = dirs.shape[0]
    best_t = np.full(n, np.inf)
    best_cos = np.zeros(n)
    best_rho = np.zeros(n)
    best_id = np.full(n, -1, dtype=np.int64)
    for pid, prim in enumerate(scene):
        rot = prim.pose.matrix()
        o = rot.T @ (origin - np.asarray(prim.pose.translation))
        d = dirs @ rot  # rows are R^T d
        with np.errstate(divide="ignore", invalid="ignore"):
            if prim.kind == "plane":
                t, cos = _hit_plane(o, d, prim.extent)
            else:
                t, cos = _hit_box(o, d, prim.extent)
        closer = t < best_t
        best_t[closer] = t[closer]
        best_cos[closer] = cos[closer]
        best_rho[closer] = prim.rho
        best_id[closer] = pid
    return best_t, best_cos, best_rho, best_id


def _hit_plane(o, d, ext):
    dz = d[:, 2]
    t = -o[2] / dz
    px = o[0] + t * d[:, 0]
    py = o[1] + t * d[:, 1]
    ok = (dz != 0) & (t > _EPS) & (np.abs(px) <= ext[0]) & (np.abs(py) <= ext[1])
    return np.where(ok, t, np.inf), np.abs(dz)


def _hit_box(o, d, ext):
    e = np.asarray(ext)
    t1 = (-e - o) / d
    t2 = (e - o) / d
    lo = np.fmin(t1, t2)
    hi = np.fmax(t1, t2)
    # rays parallel to a slab: inside keeps (-inf, inf), outside misses
    par = d == 0
    inside = np.abs(o) <= e
    lo = np.where(par, np.where(inside, -np.inf, np.inf), lo)
    hi = np.where(par, np.where(inside, np.inf, -np.inf), hi)
    t_near = lo.max(axis=1)
    t_far = hi.min(axis=1)
    ax_near = lo.argmax(axis=1)
    ax_far = hi.argmin(axis=1)
    hit = (t_near <= t_far) & (t_far > _EPS)
    use_near = t_near > _EPS
    t = np.where(hit, np.where(use_near, t_near, t_far), np.inf)
    ax = np.where(use_near, ax_near, ax_far)
    cos = np.abs(d[np.arange(d.shape[0]), ax])
    return t, cos


def raycast(scene, origin, direction):
    """Single-ray form of :func:`raycast_many`; ``None`` on a miss."""
    t, cos, rho, pid = raycast_many(scene, origin, np.asarray(direction, dtype=np.float64)[None, :])
    if not np.isfinite(t[0]):
        return None
    return Hit(float(t[0]), float(cos[0]), float(rho[0]), int(pid[0]))


@dataclass(frozen=True, eq=False)
class Returns:
    """Per-point simulator ground truth for one scan."""

    directions: np.ndarray
    R: np.ndarray
    cos_alpha: np.ndarray
    rho: np.ndarray
    primitive: np.ndarray
    times: np.ndarray


def simulate_returns(scene, cfg: RosetteConfig, scan_index, origin=(0.0, 0.0, 0.0)):
    dirs = rosette_directions(cfg, scan_index)
    times = rosette_times(cfg, scan_index)
    t, cos, rho, pid = raycast_many(scene, origin, dirs)
    hit = np.isfinite(t)
    return Returns(dirs[hit], t[hit], cos[hit], rho[hit], pid[hit], times[hit])


def simulate_scan(scene, cfg: RosetteConfig, scan_index, I_e=10.0, eta_k=EtaConstants(), origin=(0.0, 0.0, 0.0)) -> Scan:
    """One rosette sweep; misses are dropped and intensity is clamped to [0, 1]."""
    ret = simulate_returns(scene, cfg, scan_index, origin)
    if ret.R.size == 0:
        return Scan(np.zeros((0, 3)), np.zeros(0), scan_index, scan_index / cfg.rate_hz, np.zeros(0))
    inten = np.clip(forward_intensity(ret.R, ret.cos_alpha, ret.rho, I_e, eta_k), 0.0, 1.0)
    xyz = np.asarray(origin, dtype=np.float64) + ret.R[:, None] * ret.directions
    return Scan(xyz, inten, scan_index, scan_index / cfg.rate_hz, ret.times)


def simulate_sequence(scene, cfg: RosetteConfig, n_scans, I_e=10.0, eta_k=EtaConstants(), start=0):
    return [simulate_scan(scene, cfg, s, I_e, eta_k) for s in range(start, start + n_scans)]


def calibration_samples(
    scene, cfg: RosetteConfig, scan_indices, I_e=10.0, eta_k=EtaConstants(), cos_min=0.1, noise=0.0, seed=0, material="rho"
):
    """Calibration set from simulated returns; saturated and grazing returns are dropped.

    ``material="rho"`` groups primitives of equal reflectance into one
    material id; ``"primitive"`` uses the primitive index. ``noise`` adds
    multiplicative Gaussian noise of that relative size.
    """
    if material not in ("rho", "primitive"):
        raise ValueError(f"unknown material grouping {material!r}")
    parts = [simulate_returns(scene, cfg, s) for s in scan_indices]
    R = np.concatenate([p.R for p in parts])
    cos = np.concatenate([p.cos_alpha for p in parts])
    rho = np.concatenate([p.rho for p in parts])
    mat = np.concatenate([p.primitive for p in parts])
    inten = forward_intensity(R, cos, rho, I_e, eta_k)
    if noise > 0:
        inten = inten * (1.0 + noise * np.random.default_rng(seed).standard_normal(inten.shape[0]))
    if material == "rho":
        mat = np.unique(rho, return_inverse=True)[1].astype(np.int64)
    keep = (inten < 1.0) & (inten > 0.0) & (cos >= cos_min)
    return CalibSet(inten[keep], R[keep], cos[keep], mat[keep])


def render(scene, cfg: ProjectionConfig, I_e=10.0, eta_k=EtaConstants(), origin=(0.0, 0.0, 0.0)):
    """Noise-free images by casting one ray through every pixel center."""
    rays = pixel_rays(cfg).reshape(-1, 3)
    t, cos, rho, pid = raycast_many(scene, origin, rays)
    hit = np.isfinite(t)
    val = np.zeros(t.shape[0])
    val[hit] = np.clip(forward_intensity(t[hit], cos[hit], rho[hit], I_e, eta_k), 0.0, 1.0)
    dep = np.where(hit, t, 0.0)
    mask = hit.reshape(cfg.shape)
    return (
        ReflectanceImage(val.reshape(cfg.shape), mask),
        DepthImage(dep.reshape(cfg.shape), mask.copy()),
        pid.reshape(cfg.shape),
    )


# scenes ----------------------------------------------------------------------


def default_scene():
    """A closed room with pillars, wall panels and floor stripes of varied reflectance."""
    floor_z = -2.2
    prims = [
        ScenePrimitive.box((1.0, 0.5, 0.8), (12.0, 8.0, 3.0), rho=0.45),
        ScenePrimitive.box((6.0, 3.0, -1.0), (0.5, 0.5, 1.2), rho=0.85),
        ScenePrimitive.box((-4.0, -3.0, -1.2), (1.0, 0.6, 1.0), rho=0.2),
        ScenePrimitive.box((3.0, -5.0, -0.5), (0.8, 0.8, 1.7), rho=0.7, yaw=math.radians(30)),
        ScenePrimitive.box((-7.0, 4.0, -0.7), (0.6, 1.5, 1.5), rho=0.6, yaw=math.radians(-20)),
        ScenePrimitive.plane((12.95, 0.0, 0.5), (-1.0, 0.0, 0.0), (2.0, 1.0), rho=0.95),
        ScenePrimitive.plane((-10.95, 2.0, 0.0), (1.0, 0.0, 0.0), (1.5, 1.5), rho=0.1),
        ScenePrimitive.plane((2.0, 8.45, 0.0), (0.0, -1.0, 0.0), (3.0, 0.8), rho=0.9),
    ]
    for y in (-2.0, 2.0):
        prims.append(ScenePrimitive.plane((1.0, y, floor_z + 0.01), (0.0, 0.0, 1.0), (9.0, 0.15), rho=0.9))
    return prims


def plane_sweep_scene(n=12, r_min=1.0, r_max=30.0, rho=0.6, tilt_max_deg=55.0, half_angle_deg=8.0):
    """Planes of equal reflectance at log-spaced ranges, each tilted a bit more.

    Plane ``i`` sits at azimuth ``i * 360/n`` degrees.
    """
    prims = []
    ranges = np.geomspace(r_min, r_max, n)
    tilts = np.radians(np.linspace(0.0, tilt_max_deg, n))
    for i, (r, tilt) in enumerate(zip(ranges, tilts)):
        az = 2.0 * math.pi * i / n
        c = np.array([math.cos(az), math.sin(az), 0.0]) * r
        facing = -np.array([math.cos(az + tilt), math.sin(az + tilt), 0.0])
        half = r * math.tan(math.radians(half_angle_deg))
        prims.append(ScenePrimitive.plane(c, facing, (half, 2.0 * half), rho=rho))
    return prims


def scene_to_dict(scene, I_e=None, eta_k=None):
    d = {"primitives": [p.to_dict() for p in scene]}
    if I_e is not None:
        d["I_e"] = I_e
    if eta_k is not None:
        d["eta"] = {"r_d": eta_k.r_d, "d": eta_k.d, "D": eta_k.D, "S_d": eta_k.S_d}
    return d


def scene_from_dict(d):
    """Parse ``{"primitives": [...], "I_e": ..., "eta": {...}}``; returns (scene, I_e, eta)."""
    known = {"primitives", "I_e", "eta", "preset"}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ValueError(f"unknown scene key(s): {', '.join(unknown)}")
    preset = d.get("preset")
    if preset == "default":
        scene = default_scene()
    elif preset == "plane_sweep":
        scene = plane_sweep_scene()
    elif preset is None:
        scene = [ScenePrimitive.from_dict(p) for p in d.get("primitives", [])]
    else:
        raise ValueError(f"unknown scene preset {preset!r}")
    if preset is not None and d.get("primitives"):
        scene += [ScenePrimitive.from_dict(p) for p in d["primitives"]]
    eta_k = EtaConstants(**d["eta"]) if "eta" in d else EtaConstants()
    return scene, float(d.get("I_e", 10.0)), eta_k


def load_scene(path):
    with open(path) as f:
        return scene_from_dict(json.load(f))


def identity_poses(n):
    return [PoseSE3.identity() for _ in range(n)]


def transform_scene_points(pose, xyz):
    return se3_apply(pose, xyz)
