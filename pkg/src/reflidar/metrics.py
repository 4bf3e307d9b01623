"""Masked image-quality metrics on the [0, 1] intensity range."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

POLICIES = ("intersection", "gt_only")

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    rmse: float
    mae: float
    n_pixels: int
    mask_policy: str
    psnr_infinite: bool = False
    n_ssim_windows: int = 0

    CSV_COLUMNS = ("psnr_db", "ssim", "rmse", "mae", "n_pixels")

    def row(self):
        return {
            "psnr_db": "inf" if self.psnr_infinite else repr(self.psnr),
            "ssim": repr(self.ssim),
            "rmse": repr(self.rmse),
            "mae": repr(self.mae),
            "n_pixels": str(self.n_pixels),
        }


def _gaussian_taps():
    x = np.arange(SSIM_WIN) - SSIM_WIN // 2
    k = np.exp(-(x * x) / (2 * SSIM_SIGMA**2))
    return k / k.sum()


def _window_mean(a, taps):
    out = ndimage.correlate1d(a, taps, axis=0, mode="constant")
    return ndimage.correlate1d(out, taps, axis=1, mode="constant")


def ssim_map(x, y, mask):
    """Local SSIM at every window center whose 11x11 window lies inside ``mask``.

    Returns ``(values, centers)`` where ``centers`` is a boolean grid.
    """
    r = SSIM_WIN // 2
    h, w = mask.shape
    centers = np.zeros_like(mask)
    if h < SSIM_WIN or w < SSIM_WIN:
        return np.zeros(0), centers
    inner = ndimage.binary_erosion(mask, structure=np.ones((SSIM_WIN, SSIM_WIN), dtype=bool), border_value=0)
    centers[r : h - r, r : w - r] = inner[r : h - r, r : w - r]
    if not centers.any():
        return np.zeros(0), centers
    x = np.where(mask, x, 0.0)
    y = np.where(mask, y, 0.0)
    taps = _gaussian_taps()
    mx = _window_mean(x, taps)
    my = _window_mean(y, taps)
    sxx = _window_mean(x * x, taps) - mx * mx
    syy = _window_mean(y * y, taps) - my * my
    sxy = _window_mean(x * y, taps) - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
    return (num / den)[centers], centers


def evaluation_mask(pred, gt, policy):
    if policy == "intersection":
        return pred.mask & gt.mask
    if policy == "gt_only":
        return gt.mask.copy()
    raise ValueError(f"unknown mask policy {policy!r}; expected one of {POLICIES}")


def evaluate(pred, gt, policy="intersection") -> MetricReport:
    """PSNR / SSIM / RMSE / MAE of ``pred`` against ``gt`` over the evaluation mask.

    ``gt_only`` scores every gt-valid pixel and treats invalid predictions as 0.
    """
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape}, gt {gt.shape}")
    mask = evaluation_mask(pred, gt, policy)
    n = int(mask.sum())
    if n == 0:
        raise ValueError("evaluation mask is empty")
    p = np.where(pred.mask, pred.values, 0.0)
    g = gt.values
    diff = (p - g)[mask]
    mae = float(np.mean(np.abs(diff)))
    rmse = float(math.sqrt(np.mean(diff * diff)))
    if rmse == 0.0:
        psnr, inf = math.inf, True
    else:
        psnr, inf = 20.0 * math.log10(1.0 / rmse), False
    vals, centers = ssim_map(p, g, mask)
    ssim = float(vals.mean()) if vals.size else math.nan
    return MetricReport(psnr, ssim, rmse, mae, n, policy, inf, int(vals.size))
