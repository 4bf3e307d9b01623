"""Motion-style degradation of stationary scan stacks.

Each kept scan gets a random rigid perturbation, an optional odometry
pattern (an acceleration jump or a sharp turn) and Gaussian intensity
noise before fusion. All randomness comes from one seeded generator,
drawn in scan order.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .accumulation import fuse_with_poses
from .geometry import PoseSE3, Scan, se3_compose

PATTERNS = ("none", "accel_jump", "sharp_turn")


@dataclass(frozen=True)
class AugmentConfig:
    seed: int = 0
    trans_std: float = 0.02
    rot_std: float = math.radians(0.5)
    noise_std: float = 0.01
    keep_n: int = 5
    pool_n: int = 5
    odom_pattern: str = "none"
    odom_magnitude: float = 1.0

    def __post_init__(self):
        for name in ("trans_std", "rot_std", "noise_std", "odom_magnitude"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 1 <= self.keep_n <= self.pool_n:
            raise ValueError("need 1 <= keep_n <= pool_n")
        if self.odom_pattern not in PATTERNS:
            raise ValueError(f"unknown odom_pattern {self.odom_pattern!r}; expected one of {PATTERNS}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def to_dict(self):
        return asdict(self)


def _random_axis(rng):
    v = rng.standard_normal(3)
    n = np.linalg.norm(v)
    return v / n if n > 0 else np.array([0.0, 0.0, 1.0])


def _pattern_translations(trans, pattern, magnitude):
    """Scale inter-scan displacements after the midpoint for ``accel_jump``."""
    if pattern != "accel_jump" or len(trans) < 2:
        return trans
    mid = len(trans) // 2
    out = [trans[0]]
    for j in range(1, len(trans)):
        step = trans[j] - trans[j - 1]
        if j > mid:
            step = step * (1.0 + magnitude)
        out.append(out[-1] + step)
    return out


def perturbation_poses(n, cfg: AugmentConfig, rng):
    """Per-scan perturbation poses, drawn in scan order."""
    axes, angles, trans = [], [], []
    for _ in range(n):
        axes.append(_random_axis(rng))
        angles.append(rng.normal(0.0, 1.0) * cfg.rot_std)
        trans.append(rng.standard_normal(3) * cfg.trans_std)
    trans = _pattern_translations(trans, cfg.odom_pattern, cfg.odom_magnitude)
    poses = []
    for j in range(n):
        p = PoseSE3.from_axis_angle(axes[j], angles[j], tuple(trans[j].tolist()))
        if cfg.odom_pattern == "sharp_turn" and n > 1:
            yaw = cfg.odom_magnitude * (math.pi / 2) * j / (n - 1)
            p = se3_compose(PoseSE3.from_yaw(yaw), p)
        poses.append(p)
    return poses


def augment(scans, cfg: AugmentConfig):
    """Sample, perturb, add noise and fuse.

    Returns ``(FusedCloud, applied_poses)``; poses follow the sampled scan order.
    """
    scans = list(scans)
    if cfg.pool_n > len(scans):
        raise ValueError(f"pool_n ({cfg.pool_n}) exceeds the {len(scans)} available scans")
    rng = np.random.default_rng(int(cfg.seed))
    idx = np.sort(rng.choice(cfg.pool_n, size=cfg.keep_n, replace=False))
    chosen = [scans[i] for i in idx]
    poses = perturbation_poses(len(chosen), cfg, rng)
    noisy = []
    for s in chosen:
        noise = rng.standard_normal(len(s)) * cfg.noise_std
        inten = np.clip(s.intensity + noise, 0.0, 1.0)
        noisy.append(Scan(s.xyz, inten, s.scan_id, s.timestamp, s.times))
    return fuse_with_poses(noisy, poses), poses


def sampled_indices(cfg: AugmentConfig):
    """The scan indices ``augment`` would keep for this config."""
    rng = np.random.default_rng(int(cfg.seed))
    return np.sort(rng.choice(cfg.pool_n, size=cfg.keep_n, replace=False))

