"""Single-pair STARFM fusion.

Given a fine/coarse image pair at a reference date and a coarse image at the
prediction date, every fine pixel is predicted as a weighted sum over
spectrally similar neighbours ``k`` in a moving window of::

    fine_t1(k) + coarse_t0(k) - coarse_t1(k)

Weights are inverse products of spectral difference, temporal difference and
relative distance, normalised to sum to one. Coarse images are co-registered
onto the fine grid by block replication unless bilinear resampling is asked
for.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .raster import Mask, Raster, upsample_bilinear, upsample_nearest


class FusionError(ValueError):
    pass


@dataclass(frozen=True)
class StarfmParams:
    window: int = 31
    n_classes: int = 4
    eps: float = 1e-6
    resample: str = "nearest"

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError(f"window must be a positive odd integer, got {self.window}")
        if self.n_classes < 1:
            raise ValueError(f"n_classes must be >= 1, got {self.n_classes}")
        if not self.eps > 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")
        if self.resample not in ("nearest", "bilinear"):
            raise ValueError(f"resample must be 'nearest' or 'bilinear', got {self.resample!r}")


def similarity_threshold(hr: Raster, n_classes: int) -> np.ndarray:
    """Per-band ``2 sigma / n_classes`` over the whole fine image."""
    sigma = hr.values.reshape(hr.bands, -1).std(axis=1)
    return 2.0 * sigma / n_classes


def prediction_window(region: Optional[Mask], shape, half: int):
    """Rows/cols to predict: the region's bounding box padded by the window radius."""
    H, W = shape
    if region is None:
        return 0, H, 0, W
    box = region.bbox()
    if box is None:
        return 0, 0, 0, 0
    r0, r1, c0, c1 = box
    pad = max(half, 1)
    return max(r0 - pad, 0), min(r1 + pad, H), max(c0 - pad, 0), min(c1 + pad, W)


def starfm_predict(
    hr_t1: Raster,
    lr_t1: Raster,
    lr_t0: Raster,
    scale: int,
    p: Optional[StarfmParams] = None,
    region: Optional[Mask] = None,
) -> Raster:
    """Predict the fine image at the coarse image's date.

    With ``region`` given, only its bounding box padded by the window radius
    is computed; everything else is copied from ``hr_t1``.
    """
    p = p or StarfmParams()
    if lr_t1.shape != lr_t0.shape:
        raise FusionError(f"coarse rasters differ in size: {lr_t1.shape} vs {lr_t0.shape}")
    if not (lr_t1.bands == lr_t0.bands == hr_t1.bands):
        raise FusionError("fine and coarse rasters must have the same band count")
    if int(scale) != scale or scale < 1:
        raise FusionError(f"scale must be an integer >= 1, got {scale}")
    if (lr_t1.height * scale, lr_t1.width * scale) != hr_t1.shape:
        raise FusionError(
            f"coarse {lr_t1.shape} x scale {scale} does not match fine {hr_t1.shape}"
        )
    if region is not None and region.shape != hr_t1.shape:
        raise FusionError(f"region {region.shape} does not match fine {hr_t1.shape}")

    up = upsample_nearest if p.resample == "nearest" else upsample_bilinear
    m1 = up(lr_t1, scale).values
    m0 = up(lr_t0, scale).values
    L = hr_t1.values
    half = p.window // 2
    thresholds = similarity_threshold(hr_t1, p.n_classes)
    r0, r1, c0, c1 = prediction_window(region, hr_t1.shape, half)

    out = L.copy()
    if r1 > r0 and c1 > c0:
        for b in range(hr_t1.bands):
            out[b, r0:r1, c0:c1] = kernels.active.starfm_band(
                L[b], m1[b], m0[b], float(thresholds[b]), half, float(p.window),
                p.eps, r0, r1, c0, c1,
            )
    return Raster(out)


def starfm_weights(L, M1, M0, y, x, threshold, p: StarfmParams):
    """Candidate coordinates and normalised weights at one pixel (one band).

    Slow and explicit; meant for inspection and tests.
    """
    H, W = L.shape
    half = p.window // 2
    coords, inv = [], []
    for ky in range(max(y - half, 0), min(y + half + 1, H)):
        for kx in range(max(x - half, 0), min(x + half + 1, W)):
            if (ky, kx) != (y, x) and abs(L[ky, kx] - L[y, x]) > threshold:
                continue
            s = abs(L[ky, kx] - M1[ky, kx]) + p.eps
            t = abs(M0[ky, kx] - M1[ky, kx]) + p.eps
            d = 1.0 + np.hypot(ky - y, kx - x) / (p.window / 2.0)
            coords.append((ky, kx))
            inv.append(1.0 / (s * t * d))
    inv = np.array(inv)
    return coords, inv / inv.sum()
