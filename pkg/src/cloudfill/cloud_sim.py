"""Reproducible synthetic cloud masks.

Masks are thresholded smoothed noise: a grid of SplitMix64 uniforms is box
blurred, then the threshold is bisected until the requested coverage is hit.
SplitMix64 is used in counter mode (value ``i`` is the mixer applied to
``seed + (i + 1) * 0x9E3779B97F4A7C15``), so a mask depends only on its
arguments and is identical on any platform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .raster import FOUR_CONNECTED, Mask, Raster

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

MIN_BLOB_AREA = 4
BLUR_PASSES = 3
COVERAGE_TOLERANCE = 0.02


class MaskSimulationError(RuntimeError):
    pass


def splitmix64(seed: int, n: int) -> np.ndarray:
    """First ``n`` outputs of SplitMix64 seeded with ``seed`` (uint64)."""
    state = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    with np.errstate(over="ignore"):
        z = state + _GOLDEN * np.arange(1, n + 1, dtype=np.uint64)
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        z = z ^ (z >> np.uint64(31))
    return z


def uniform_noise(seed: int, shape: tuple[int, ...]) -> np.ndarray:
    """Uniform doubles in [0, 1) built from the top 53 bits of SplitMix64."""
    n = int(np.prod(shape))
    bits = splitmix64(seed, n) >> np.uint64(11)
    return (bits.astype(np.float64) * 2.0**-53).reshape(shape)


@dataclass(frozen=True)
class CloudShapeParams:
    """Knobs of the mask generator.

    ``margin`` keeps clouds that many cells away from the image edge; the
    Poisson solver cannot use frame-edge cells as unknowns.
    """

    coverage_fraction: float = 0.25
    smoothness: int = 4
    seed: int = 0
    margin: int = 1

    def __post_init__(self):
        if not 0.01 <= self.coverage_fraction <= 0.9:
            raise ValueError(
                f"coverage_fraction must be in [0.01, 0.9], got {self.coverage_fraction}"
            )
        if int(self.smoothness) != self.smoothness or self.smoothness < 1:
            raise ValueError(f"smoothness must be an integer >= 1, got {self.smoothness}")
        if self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")


def _drop_small_blobs(cells: np.ndarray) -> np.ndarray:
    labels, n = ndimage.label(cells, structure=FOUR_CONNECTED)
    if n == 0:
        return cells
    sizes = np.bincount(labels.ravel())
    keep = sizes >= MIN_BLOB_AREA
    keep[0] = False
    return keep[labels]


def simulate_mask(width: int, height: int, p: CloudShapeParams) -> Mask:
    """Blob-like cloud mask with coverage within 2 points of the target."""
    if width < 8 or height < 8:
        raise ValueError(f"mask must be at least 8x8, got {width}x{height}")
    size = 2 * int(p.smoothness) + 1
    field = uniform_noise(p.seed, (height, width))
    for _ in range(BLUR_PASSES):
        field = ndimage.uniform_filter(field, size=size, mode="reflect")

    allowed = np.zeros((height, width), dtype=bool)
    m = p.margin
    allowed[m : height - m, m : width - m] = True
    if allowed.sum() < p.coverage_fraction * width * height:
        raise MaskSimulationError(
            f"margin {m} leaves too few cells for coverage {p.coverage_fraction}"
        )

    def mask_at(threshold: float) -> np.ndarray:
        return _drop_small_blobs((field > threshold) & allowed)

    target = p.coverage_fraction * width * height
    lo, hi = float(field.min()) - 1.0, float(field.max())
    best = None
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        cells = mask_at(mid)
        count = int(cells.sum())
        if best is None or abs(count - target) < abs(best.sum() - target):
            best = cells
        if count > target:
            lo = mid
        elif count < target:
            hi = mid
        else:
            break
    coverage = best.sum() / (width * height)
    if abs(coverage - p.coverage_fraction) > COVERAGE_TOLERANCE:
        raise MaskSimulationError(
            f"reached coverage {coverage:.4f}, wanted {p.coverage_fraction:.4f}"
        )
    return Mask(best)


def apply_mask(r: Raster, m: Mask, fill: float = 1.0) -> Raster:
    """Replace every band at missing cells with ``fill``."""
    if r.shape != m.shape:
        raise ValueError(f"dimension mismatch: raster {r.shape} vs mask {m.shape}")
    out = np.where(m.cells[np.newaxis], fill, r.values)
    return Raster(out)
