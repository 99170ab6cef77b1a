"""Reconstruction quality metrics: CC, NMSE and UIQI.

All three are evaluated over the reconstructed (masked) cells only, per band,
and then averaged over bands. UIQI is computed globally over the region
rather than in sliding 8x8 windows since cloud regions are irregular.
Variances and covariances use the sample (n - 1) normalisation.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass

import numpy as np

from .raster import Mask, Raster


class MetricError(ValueError):
    """A metric is undefined for the given inputs."""


def _pair(x, y, min_len):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise MetricError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < min_len:
        raise MetricError(f"need at least {min_len} values, got {x.size}")
    return x, y


def cc(x, y) -> float:
    """Pearson correlation coefficient."""
    x, y = _pair(x, y, 2)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = np.dot(dx, dx)
    syy = np.dot(dy, dy)
    if sxx == 0.0 or syy == 0.0:
        raise MetricError("correlation undefined for a constant sequence")
    r = np.dot(dx, dy) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def nmse(truth, est) -> float:
    """Normalised mean square error ``sum((t - e)^2) / sum(t^2)``."""
    t, e = _pair(truth, est, 1)
    denom = np.dot(t, t)
    if denom == 0.0:
        raise MetricError("NMSE undefined for an all-zero truth")
    d = t - e
    return float(np.dot(d, d) / denom)


def uiqi(x, y) -> float:
    """Universal image quality index over the whole sequence."""
    x, y = _pair(x, y, 2)
    n = x.size
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    vx = np.dot(dx, dx) / (n - 1)
    vy = np.dot(dy, dy) / (n - 1)
    cxy = np.dot(dx, dy) / (n - 1)
    denom = (vx + vy) * (mx * mx + my * my)
    if denom == 0.0:
        raise MetricError("UIQI undefined: zero denominator")
    q = 4.0 * cxy * mx * my / denom
    return float(np.clip(q, -1.0, 1.0))


@dataclass(frozen=True)
class BandMetrics:
    cc: float
    nmse: float
    uiqi: float


@dataclass(frozen=True)
class MetricsReport:
    per_band: list[BandMetrics]
    mean_cc: float
    mean_nmse: float
    mean_uiqi: float
    n_cells: int

    def to_dict(self) -> dict:
        return asdict(self)

    def csv_rows(self, method: str) -> list[list]:
        rows = [[method, b, m.cc, m.nmse, m.uiqi] for b, m in enumerate(self.per_band)]
        rows.append([method, "mean", self.mean_cc, self.mean_nmse, self.mean_uiqi])
        return rows


CSV_HEADER = ["method", "band", "cc", "nmse", "uiqi"]


def format_csv(rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def evaluate(original: Raster, recon: Raster, region: Mask) -> MetricsReport:
    """CC/NMSE/UIQI per band over the cells where ``region`` is true.

    Raises
    ------
    MetricError
        If the region is empty, shapes disagree, or a metric is undefined
        for some band (the message names the band).
    """
    if original.values.shape != recon.values.shape:
        raise MetricError(
            f"shape mismatch: original {original.values.shape} vs recon {recon.values.shape}"
        )
    if region.shape != original.shape:
        raise MetricError(f"region {region.shape} does not match raster {original.shape}")
    n = region.count
    if n == 0:
        raise MetricError("evaluation region is empty")
    per_band = []
    for b in range(original.bands):
        x = original.values[b][region.cells]
        y = recon.values[b][region.cells]
        try:
            per_band.append(BandMetrics(cc(x, y), nmse(x, y), uiqi(x, y)))
        except MetricError as exc:
            raise MetricError(f"band {b}: {exc}") from exc
    return MetricsReport(
        per_band=per_band,
        mean_cc=float(np.mean([m.cc for m in per_band])),
        mean_nmse=float(np.mean([m.nmse for m in per_band])),
        mean_uiqi=float(np.mean([m.uiqi for m in per_band])),
        n_cells=n,
    )
