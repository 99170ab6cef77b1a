"""Weighted linear regression gap filling ("WLR-lite").

Each missing pixel is predicted from an affine fit ``target ~ a * ref + c``
over clear pixels in a window around it. The window starts at
``initial_window`` and grows by one cell per side until it holds
``min_samples`` clear pixels or reaches ``max_window``. Of those, the
``n_similar`` pixels closest in reference value are kept (ties in row-major
order) and weighted by::

    w = 1 / (distance * (1 + |ref(s) - ref(q)| / sigma_band))

Pixels with too few samples, or whose samples have a flat reference, are
filled with the inverse-distance mean of the sampled target values and
counted in the diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .raster import Mask, Raster

SIGMA_FLOOR = 1e-12


@dataclass(frozen=True)
class WlrParams:
    initial_window: int = 21
    max_window: int = 61
    min_samples: int = 20
    n_similar: int = 40

    def __post_init__(self):
        for name in ("initial_window", "max_window"):
            val = getattr(self, name)
            if val < 1 or val % 2 == 0:
                raise ValueError(f"{name} must be a positive odd integer, got {val}")
        if self.initial_window > self.max_window:
            raise ValueError("initial_window must not exceed max_window")
        if self.min_samples < 3:
            raise ValueError(f"min_samples must be >= 3, got {self.min_samples}")
        if self.n_similar < self.min_samples:
            raise ValueError("n_similar must be >= min_samples")


@dataclass
class WlrDiagnostics:
    regression: int = 0
    starved: int = 0
    degenerate: int = 0
    empty: int = 0
    flags: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def fallback_count(self) -> int:
        return self.starved + self.degenerate + self.empty


def wlr_reconstruct(
    target: Raster,
    m: Mask,
    reference: Raster,
    p: Optional[WlrParams] = None,
    full_output: bool = False,
):
    """Fill the masked pixels of ``target`` band by band.

    Returns the filled Raster, or ``(Raster, WlrDiagnostics)`` with
    ``full_output``. Clear pixels are passed through untouched.
    """
    p = p or WlrParams()
    if target.values.shape != reference.values.shape:
        raise ValueError(
            f"target {target.values.shape} and reference {reference.values.shape} differ"
        )
    if m.shape != target.shape:
        raise ValueError(f"mask {m.shape} does not match raster {target.shape}")

    diag = WlrDiagnostics()
    out = target.values.copy()
    qs = np.argwhere(m.cells).astype(np.int64)
    if qs.size == 0:
        diag.flags = np.empty((0, target.bands), dtype=np.int8)
        return (target, diag) if full_output else target

    valid = ~m.cells
    sat = np.zeros((target.height + 1, target.width + 1), dtype=np.int64)
    sat[1:, 1:] = valid.cumsum(0).cumsum(1)
    ref_valid = reference.values[:, valid]
    if ref_valid.shape[1]:
        sigma = ref_valid.std(axis=1)
        band_mean = target.values[:, valid].mean(axis=1)
    else:
        sigma = np.ones(target.bands)
        band_mean = np.zeros(target.bands)
    sigma = np.where(sigma < SIGMA_FLOOR, 1.0, sigma)

    vals, flags = kernels.active.wlr_fill(
        target.values, reference.values, sat, valid.astype(np.uint8), qs,
        sigma, band_mean, p.initial_window // 2, p.max_window // 2,
        p.min_samples, p.n_similar,
    )
    out[:, qs[:, 0], qs[:, 1]] = vals.T
    diag.flags = flags
    diag.regression = int((flags == kernels.WLR_REGRESSION).sum())
    diag.starved = int((flags == kernels.WLR_STARVED).sum())
    diag.degenerate = int((flags == kernels.WLR_DEGENERATE).sum())
    diag.empty = int((flags == kernels.WLR_EMPTY).sum())
    result = Raster(out)
    return (result, diag) if full_output else result
