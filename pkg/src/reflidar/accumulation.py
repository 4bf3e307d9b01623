"""Multi-scan fusion and sparse/dense image pairs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PoseSE3, Scan, se3_apply
from .projection import ProjectionConfig, project

DEFAULT_SPARSE_N = 5
DEFAULT_DENSE_N = 500


@dataclass(frozen=True, eq=False)
class FusedCloud:
    xyz: np.ndarray
    intensity: np.ndarray
    source_ids: np.ndarray
    n_scans: int

    def __len__(self):
        return self.xyz.shape[0]

    def equals(self, other):
        return (
            self.n_scans == other.n_scans
            and np.array_equal(self.xyz, other.xyz)
            and np.array_equal(self.intensity, other.intensity)
            and np.array_equal(self.source_ids, other.source_ids)
        )

    def project(self, cfg: ProjectionConfig):
        return project(self.xyz, self.intensity, cfg)


def _merge(parts, scans):
    xyz = np.concatenate(parts) if parts else np.zeros((0, 3))
    inten = np.concatenate([s.intensity for s in scans])
    ids = np.concatenate([np.full(len(s), s.scan_id, dtype=np.int64) for s in scans])
    return FusedCloud(xyz.reshape(-1, 3), inten, ids, len(scans))


def fuse_static(scans) -> FusedCloud:
    """Concatenate scans without any transform."""
    scans = list(scans)
    if not scans:
        raise ValueError("need at least one scan to fuse")
    return _merge([s.xyz for s in scans], scans)


def fuse_with_poses(scans, poses) -> FusedCloud:
    """Transform scan ``i`` by ``poses[i]`` into the reference frame, then concatenate."""
    scans = list(scans)
    poses = list(poses)
    if not scans:
        raise ValueError("need at least one scan to fuse")
    if len(scans) != len(poses):
        raise ValueError(f"got {len(scans)} scans but {len(poses)} poses")
    return _merge([se3_apply(p, s.xyz) for s, p in zip(scans, poses)], scans)


def transform_scans(scans, poses):
    """Each scan moved into the reference frame by its pose, kept as separate scans."""
    scans = list(scans)
    poses = list(poses)
    if len(scans) != len(poses):
        raise ValueError(f"got {len(scans)} scans but {len(poses)} poses")
    return [Scan(se3_apply(p, s.xyz), s.intensity, s.scan_id, s.timestamp, s.times) for s, p in zip(scans, poses)]


def make_pair(scans, poses, cfg: ProjectionConfig, sparse_n=DEFAULT_SPARSE_N, dense_n=DEFAULT_DENSE_N):
    """Sparse input from the first ``sparse_n`` posed scans, dense target from the first ``dense_n``.

    The dense side is fused untransformed (stationary capture). Returns
    ``((sparse_refl, sparse_depth), (dense_refl, dense_depth))``.
    """
    scans = list(scans)
    poses = list(poses) if poses is not None else [PoseSE3.identity()] * len(scans)
    if sparse_n < 1:
        raise ValueError("sparse_n must be >= 1")
    if sparse_n > dense_n:
        raise ValueError(f"sparse_n ({sparse_n}) must not exceed dense_n ({dense_n})")
    if dense_n > len(scans):
        raise ValueError(f"dense_n ({dense_n}) exceeds the {len(scans)} available scans")
    if len(poses) < sparse_n:
        raise ValueError("not enough poses for the sparse side")
    sparse = fuse_with_poses(scans[:sparse_n], poses[:sparse_n]).project(cfg)
    dense = fuse_static(scans[:dense_n]).project(cfg)
    return sparse, dense
