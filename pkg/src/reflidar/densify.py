"""Classical sparse-to-dense completion of reflectance/depth pairs."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .projection import DepthImage, ReflectanceImage

GUIDES = ("none", "depth")
SMOOTHING = ("none", "edge_aware")


@dataclass(frozen=True)
class DensifyConfig:
    method: str = "multiscale_morph"
    scales: tuple = (3, 5, 9)
    smoothing: str = "none"
    edge_sigma_r: float = 0.05
    guide: str = "depth"

    def __post_init__(self):
        scales = tuple(int(s) for s in self.scales)
        object.__setattr__(self, "scales", scales)
        if self.method not in METHODS:
            raise ValueError(f"unknown densify method {self.method!r}; expected one of {tuple(METHODS)}")
        if not scales or any(s < 1 or s % 2 == 0 for s in scales):
            raise ValueError("scales must be odd positive window sizes")
        if list(scales) != sorted(scales):
            raise ValueError("scales must be ascending")
        if self.guide not in GUIDES:
            raise ValueError(f"unknown guide {self.guide!r}; expected one of {GUIDES}")
        if self.smoothing not in SMOOTHING:
            raise ValueError(f"unknown smoothing {self.smoothing!r}; expected one of {SMOOTHING}")
        if not self.edge_sigma_r > 0:
            raise ValueError("edge_sigma_r must be > 0")

    def to_dict(self):
        d = asdict(self)
        d["scales"] = list(self.scales)
        return d


def _multiscale_morph(L, D, cfg):
    mask0 = L.mask & D.mask
    val = np.where(mask0, L.values, 0.0)
    dep = np.where(mask0, D.values, 0.0)
    mask = mask0.copy()
    use_depth = cfg.guide == "depth"
    for win in cfg.scales:
        if mask.all():
            break
        val, dep, mask = kernels.fill_pass(val, dep, mask, win, use_depth)
    if cfg.smoothing == "edge_aware":
        filled = mask & ~mask0
        val = kernels.smooth(val, mask, filled, float(cfg.edge_sigma_r), kernels._DOMAIN)
    return ReflectanceImage(val, mask), DepthImage(dep, mask.copy())


METHODS = {"multiscale_morph": _multiscale_morph}


def densify(L: ReflectanceImage, D: DepthImage, cfg: DensifyConfig | None = None):
    """Fill holes scale by scale; already-valid pixels are never modified.

    With ``guide="depth"`` a hole takes the reflectance and depth of its
    nearest-range valid neighbour (foreground wins); otherwise the median of
    the valid neighbours. Optional bilateral smoothing touches only filled
    pixels. A pixel counts as valid input only if valid in both images.
    """
    cfg = cfg or DensifyConfig()
    if L.shape != D.shape:
        raise ValueError(f"shape mismatch: reflectance {L.shape}, depth {D.shape}")
    return METHODS[cfg.method](L, D, cfg)
