"""Sparse LiDAR point clouds to calibrated, densified reflectance images."""

__version__ = "0.1.0"

from .accumulation import FusedCloud, fuse_static, fuse_with_poses, make_pair
from .augmentation import AugmentConfig, augment
from .compensation import (
    CalibSample,
    CalibSet,
    CompensationParams,
    EtaConstants,
    compensate_image,
    correct_closed_form,
    eta,
    fit_params,
    forward_intensity,
    g_of_R,
)
from .densify import DensifyConfig, densify
from .geometry import NormalImage, Point3, PoseSE3, Scan, estimate_normals, se3_apply, se3_compose, se3_inverse
from .metrics import MetricReport, evaluate
from .projection import (
    DepthImage,
    ProjectionConfig,
    ReflectanceImage,
    project,
    project_four_views,
    project_panoramic,
    project_virtual_camera,
)
from .synth import RosetteConfig, ScenePrimitive, raycast, rosette_directions, simulate_scan

__all__ = [
    "AugmentConfig",
    "CalibSample",
    "CalibSet",
    "CompensationParams",
    "DensifyConfig",
    "DepthImage",
    "EtaConstants",
    "FusedCloud",
    "MetricReport",
    "NormalImage",
    "Point3",
    "PoseSE3",
    "ProjectionConfig",
    "ReflectanceImage",
    "RosetteConfig",
    "Scan",
    "ScenePrimitive",
    "augment",
    "compensate_image",
    "correct_closed_form",
    "densify",
    "estimate_normals",
    "eta",
    "evaluate",
    "fit_params",
    "forward_intensity",
    "fuse_static",
    "fuse_with_poses",
    "g_of_R",
    "make_pair",
    "project",
    "project_four_views",
    "project_panoramic",
    "project_virtual_camera",
    "raycast",
    "rosette_directions",
    "se3_apply",
    "se3_compose",
    "se3_inverse",
    "simulate_scan",
]
