"""Synthetic fine-resolution scene pairs for desk-scale experiments.

A pair is a clear reference image at t1 and the true image at t0 over a
three-class land cover. Between the dates every class-0 cell brightens by
``delta + 0.05 * band`` (a class-specific change such as a crop cycle), which
lifts class 0 above class 1 while class 2 stays put. The change is
region-wise and visible in block-mean coarse images. Two layouts exist:

``patches``
    large blobs, so most coarse cells are pure (a homogeneous landscape).
``checker``
    classes 0 and 1 alternate in squares of ``checker`` cells, smaller than
    a coarse cell, so coarse cells mix them (a heterogeneous landscape).

Class 2 takes the lowest fifth of a smooth field inside the cloud mask in
both layouts; in ``patches`` class 0 takes the top 45 %.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .cloud_sim import uniform_noise
from .raster import Mask, Raster

KINDS = ("patches", "checker")

# per-class base reflectance of band 0 and the step added per band
CLASS_BASE = (0.18, 0.36, 0.03)
CLASS2_QUANTILE = 0.20
CLASS0_QUANTILE = 0.55
BAND_STEP = 0.05
TEXTURE = 0.01
# offsets keeping the scene fields independent of a mask drawn with the same seed
CLASS_STREAM = 0x5C3E
TEXTURE_STREAM = 0x7E47


def smooth_field(seed: int, shape: tuple[int, int], radius: int, passes: int = 3) -> np.ndarray:
    """Zero-mean, unit-std box-blurred noise."""
    f = uniform_noise(seed, shape)
    for _ in range(passes):
        f = ndimage.uniform_filter(f, size=2 * radius + 1, mode="reflect")
    f = f - f.mean()
    std = f.std()
    return f / std if std > 0 else f


@dataclass(frozen=True)
class ChangeSpec:
    delta: float = 0.25
    patch_radius: int = 6
    checker: int = 2


def class_map(mask: Mask, seed: int, kind: str, spec: ChangeSpec) -> np.ndarray:
    """Land-cover classes 0, 1, 2 balanced over the cloud mask."""
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    H, W = mask.shape
    field = smooth_field(seed + CLASS_STREAM, (H, W), radius=spec.patch_radius)
    inside = field[mask.cells] if mask.count else field.ravel()
    low, high = np.quantile(inside, [CLASS2_QUANTILE, CLASS0_QUANTILE])
    if kind == "patches":
        classes = np.where(field > high, 0, 1)
    else:
        yy, xx = np.mgrid[0:H, 0:W]
        classes = ((yy // spec.checker) + (xx // spec.checker)) % 2
    classes = np.where(field <= low, 2, classes)
    return classes.astype(np.int8)


def change_pair(mask: Mask, bands: int, seed: int, kind: str = "patches",
                spec: ChangeSpec = ChangeSpec()) -> tuple[Raster, Raster, np.ndarray]:
    """``(reference_t1, truth_t0, changed)`` on the mask's grid."""
    H, W = mask.shape
    classes = class_map(mask, seed, kind, spec)
    tex = smooth_field(seed + TEXTURE_STREAM, (H, W), radius=1)
    ref = np.empty((bands, H, W))
    for b in range(bands):
        base = np.choose(classes, CLASS_BASE) + BAND_STEP * b
        ref[b] = base + TEXTURE * (1 + 0.3 * b) * np.roll(tex, 3 * b, axis=1)
    ref = np.clip(ref, 0.0, 1.0)
    changed = classes == 0
    deltas = spec.delta + 0.05 * np.arange(bands)
    truth = ref + deltas[:, None, None] * changed[None]
    return Raster(ref), Raster(truth), changed
