"""Raster and mask data model, RASB container I/O and resampling.

A :class:`Raster` holds band-sequential float64 values of shape
``(bands, height, width)``. Masks are boolean ``(height, width)`` grids where
``True`` marks a cloud-contaminated (missing) cell.

The RASB container is a JSON header ``<name>.json`` next to a raw payload
``<name>.rasb`` of little-endian IEEE-754 floats::

    {"width": 4, "height": 3, "bands": 2, "dtype": "f32",
     "order": "band-sequential row-major", "byte_order": "little-endian"}

``save_raster`` writes ``f32`` whenever that is lossless and ``f64``
otherwise, so ``load_raster(save_raster(r))`` always reproduces ``r`` bit for
bit.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy import ndimage

PathLike = Union[str, "os.PathLike[str]"]

ORDER = "band-sequential row-major"
BYTE_ORDER = "little-endian"
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}

# 4-connectivity structuring element
FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


class RasterFormatError(ValueError):
    """Malformed header, payload size mismatch or non-finite payload."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Raster:
    """Immutable multi-band grid of reflectance values.

    Parameters
    ----------
    values : array_like
        Array of shape ``(bands, height, width)``; a 2-D array is taken as a
        single band.
    """

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.ndim == 2:
            arr = arr[np.newaxis]
        if arr.ndim != 3:
            raise ValueError(f"raster values must be 2-D or 3-D, got {arr.ndim}-D")
        if arr.shape[0] < 1:
            raise ValueError("raster must have at least one band")
        if arr.shape[1] < 1 or arr.shape[2] < 1:
            raise ValueError("raster must have non-zero width and height")
        if not np.all(np.isfinite(arr)):
            raise ValueError("raster values must be finite")
        object.__setattr__(self, "values", _frozen(arr))

    @property
    def bands(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        """Grid shape ``(height, width)``."""
        return self.values.shape[1:]

    def band(self, b: int) -> np.ndarray:
        return self.values[b]

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return self.values.shape == other.values.shape and bool(
            np.array_equal(self.values, other.values)
        )

    __hash__ = None

    def __repr__(self):
        return f"Raster(width={self.width}, height={self.height}, bands={self.bands})"


@dataclass(frozen=True, eq=False)
class Mask:
    """Boolean cloud mask; ``True`` marks missing cells (the region Omega)."""

    cells: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.cells)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-D, got {arr.ndim}-D")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("mask must have non-zero width and height")
        if arr.dtype != bool:
            if np.issubdtype(arr.dtype, np.floating) and not np.all(np.isfinite(arr)):
                raise ValueError("mask values must be finite")
            arr = arr != 0
        object.__setattr__(self, "cells", _frozen(np.array(arr, dtype=bool, copy=True)))

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    @property
    def count(self) -> int:
        return int(self.cells.sum())

    @property
    def coverage(self) -> float:
        return self.count / self.cells.size

    def boundary(self) -> np.ndarray:
        """Clear cells 4-adjacent to a missing cell."""
        grown = ndimage.binary_dilation(self.cells, structure=FOUR_CONNECTED)
        return grown & ~self.cells

    def dilated(self, iterations: int = 1) -> np.ndarray:
        return ndimage.binary_dilation(
            self.cells, structure=FOUR_CONNECTED, iterations=iterations
        )

    def bbox(self) -> Optional[tuple[int, int, int, int]]:
        """``(row0, row1, col0, col1)`` half-open bounding box, None if empty."""
        rows = np.flatnonzero(self.cells.any(axis=1))
        if rows.size == 0:
            return None
        cols = np.flatnonzero(self.cells.any(axis=0))
        return int(rows[0]), int(rows[-1]) + 1, int(cols[0]), int(cols[-1]) + 1

    def to_raster(self) -> Raster:
        return Raster(self.cells.astype(np.float64))

    @classmethod
    def from_raster(cls, r: Raster) -> "Mask":
        if r.bands != 1:
            raise ValueError(f"mask raster must have one band, got {r.bands}")
        vals = r.values[0]
        if not np.all((vals == 0.0) | (vals == 1.0)):
            raise ValueError("mask raster values must be 0.0 or 1.0")
        return cls(vals == 1.0)

    @classmethod
    def empty(cls, height: int, width: int) -> "Mask":
        return cls(np.zeros((height, width), dtype=bool))

    def __eq__(self, other):
        if not isinstance(other, Mask):
            return NotImplemented
        return bool(np.array_equal(self.cells, other.cells))

    __hash__ = None

    def __repr__(self):
        return f"Mask(width={self.width}, height={self.height}, count={self.count})"


@dataclass(frozen=True)
class SceneBundle:
    """Inputs of a reconstruction.

    ``ref_lr``, ``target_lr`` and ``scale`` are only needed by the fusion
    method; same-sensor methods read ``target_hr``, ``mask`` and ``ref_hr``.
    """

    target_hr: Raster
    mask: Mask
    ref_hr: Raster
    ref_lr: Optional[Raster] = None
    target_lr: Optional[Raster] = None
    scale: Optional[int] = None

    @property
    def has_lr(self) -> bool:
        return self.ref_lr is not None and self.target_lr is not None


def validate_bundle(b: SceneBundle, require_lr: bool = True) -> list[str]:
    """Return every violated bundle invariant; an empty list means valid."""
    errors: list[str] = []
    hr_shape = b.target_hr.shape
    if b.ref_hr.shape != hr_shape:
        errors.append(f"dimension mismatch: ref_hr {b.ref_hr.shape} vs target_hr {hr_shape}")
    if b.mask.shape != hr_shape:
        errors.append(f"dimension mismatch: mask {b.mask.shape} vs target_hr {hr_shape}")
    if b.ref_hr.bands != b.target_hr.bands:
        errors.append(
            f"band mismatch: ref_hr has {b.ref_hr.bands} bands, target_hr has {b.target_hr.bands}"
        )

    lr = [(name, getattr(b, name)) for name in ("ref_lr", "target_lr")]
    missing = [name for name, r in lr if r is None]
    if missing:
        if require_lr:
            errors.append(f"missing low-resolution raster(s): {', '.join(missing)}")
        return errors
    if b.scale is None or int(b.scale) != b.scale or b.scale < 1:
        errors.append(f"scale must be an integer >= 1, got {b.scale!r}")
        return errors

    if b.ref_lr.shape != b.target_lr.shape:
        errors.append(
            f"dimension mismatch: ref_lr {b.ref_lr.shape} vs target_lr {b.target_lr.shape}"
        )
    for name, r in lr:
        if r.bands != b.target_hr.bands:
            errors.append(
                f"band mismatch: {name} has {r.bands} bands, target_hr has {b.target_hr.bands}"
            )
        expected = (r.height * b.scale, r.width * b.scale)
        if expected != hr_shape:
            errors.append(
                f"scale mismatch: {name} {r.shape} x {b.scale} = {expected}, "
                f"target_hr is {hr_shape}"
            )
    return errors


def block_downsample(r: Raster, scale: int) -> Raster:
    """Mean of each ``scale x scale`` block, per band."""
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    if r.height % scale or r.width % scale:
        raise ValueError(f"dimensions {r.shape} are not divisible by scale {scale}")
    if scale == 1:
        return r
    b, h, w = r.values.shape
    blocks = r.values.reshape(b, h // scale, scale, w // scale, scale)
    return Raster(blocks.mean(axis=(2, 4)))


def upsample_nearest(r: Raster, scale: int) -> Raster:
    """Replicate every cell into a ``scale x scale`` block."""
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    if scale == 1:
        return r
    return Raster(np.repeat(np.repeat(r.values, scale, axis=1), scale, axis=2))


def upsample_bilinear(r: Raster, scale: int) -> Raster:
    """Pixel-centre bilinear interpolation onto the fine grid, edges clamped."""
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    if scale == 1:
        return r

    def coords(n):
        pos = (np.arange(n * scale) + 0.5) / scale - 0.5
        pos = np.clip(pos, 0.0, n - 1)
        lo = np.minimum(np.floor(pos).astype(int), max(n - 2, 0))
        frac = pos - lo
        hi = np.minimum(lo + 1, n - 1)
        return lo, hi, frac

    r0, r1, fr = coords(r.height)
    c0, c1, fc = coords(r.width)
    v = r.values
    top = v[:, r0][:, :, c0] * (1 - fc) + v[:, r0][:, :, c1] * fc
    bot = v[:, r1][:, :, c0] * (1 - fc) + v[:, r1][:, :, c1] * fc
    return Raster(top * (1 - fr)[:, None] + bot * fr[:, None])


# -- RASB container ---------------------------------------------------------


def _paths(path: PathLike) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".json", ".rasb"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".json"), p.with_name(p.name + ".rasb")


def _read_header(header_path: Path) -> dict:
    try:
        header = json.loads(header_path.read_text())
    except json.JSONDecodeError as exc:
        raise RasterFormatError(f"{header_path}: header is not valid JSON ({exc})") from exc
    if not isinstance(header, dict):
        raise RasterFormatError(f"{header_path}: header must be a JSON object")
    for key in ("width", "height", "bands"):
        val = header.get(key)
        if not isinstance(val, int) or isinstance(val, bool) or val < 1:
            raise RasterFormatError(f"{header_path}: '{key}' must be a positive integer")
    dtype = header.get("dtype", "f32")
    if dtype not in _DTYPES:
        raise RasterFormatError(f"{header_path}: unsupported dtype {dtype!r}")
    if header.get("order", ORDER) != ORDER:
        raise RasterFormatError(f"{header_path}: unsupported order {header.get('order')!r}")
    if header.get("byte_order", BYTE_ORDER) != BYTE_ORDER:
        raise RasterFormatError(
            f"{header_path}: unsupported byte_order {header.get('byte_order')!r}"
        )
    return header


def load_raster(path: PathLike) -> Raster:
    """Load a RASB raster; ``path`` may name the header, the payload or the stem."""
    header_path, payload_path = _paths(path)
    header = _read_header(header_path)
    dtype = _DTYPES[header.get("dtype", "f32")]
    payload = payload_path.read_bytes()
    w, h, b = header["width"], header["height"], header["bands"]
    expected = w * h * b
    if len(payload) % dtype.itemsize or len(payload) // dtype.itemsize != expected:
        raise RasterFormatError(
            f"{payload_path}: header declares {w}x{h}x{b} = {expected} values, "
            f"payload holds {len(payload) / dtype.itemsize:g}"
        )
    values = np.frombuffer(payload, dtype=dtype).astype(np.float64).reshape(b, h, w)
    if not np.all(np.isfinite(values)):
        raise RasterFormatError(f"{payload_path}: payload contains non-finite values")
    return Raster(values)


def save_raster(r: Raster, path: PathLike, dtype: Optional[str] = None) -> None:
    """Write ``r`` as RASB.

    ``dtype=None`` picks ``f32`` when every value survives the float32 round
    trip and ``f64`` otherwise. Forcing ``dtype="f32"`` may lose precision.
    """
    if dtype is None:
        as32 = r.values.astype(np.float32)
        dtype = "f32" if np.array_equal(as32.astype(np.float64), r.values) else "f64"
    if dtype not in _DTYPES:
        raise ValueError(f"unsupported dtype {dtype!r}")
    header_path, payload_path = _paths(path)
    header_path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "width": r.width,
        "height": r.height,
        "bands": r.bands,
        "dtype": dtype,
        "order": ORDER,
        "byte_order": BYTE_ORDER,
    }
    payload_path.write_bytes(np.ascontiguousarray(r.values, dtype=_DTYPES[dtype]).tobytes())
    header_path.write_text(json.dumps(header, indent=2) + "\n")


def load_mask(path: PathLike) -> Mask:
    return Mask.from_raster(load_raster(path))


def save_mask(m: Mask, path: PathLike) -> None:
    save_raster(m.to_raster(), path, dtype="f32")


# -- previews ---------------------------------------------------------------


def stretch_to_uint8(band: np.ndarray) -> tuple[np.ndarray, tuple[float, float]]:
    lo, hi = float(band.min()), float(band.max())
    if hi > lo:
        scaled = np.rint((band - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.zeros_like(band)
    return scaled.astype(np.uint8), (lo, hi)


def export_pnm(r: Raster, path: PathLike, bands: Optional[list[int]] = None) -> list[tuple[float, float]]:
    """Write an 8-bit PGM (one band) or PPM (three bands) preview.

    Each band is min-max stretched independently; the stretch bounds are
    returned. Previews are lossy and only meant for looking at.
    """
    if bands is None:
        bands = [0, 1, 2] if r.bands >= 3 else [0]
    if len(bands) not in (1, 3):
        raise ValueError("preview needs 1 band (PGM) or 3 bands (PPM)")
    planes, bounds = [], []
    for b in bands:
        plane, bnd = stretch_to_uint8(r.values[b])
        planes.append(plane)
        bounds.append(bnd)
    magic = b"P5" if len(bands) == 1 else b"P6"
    data = planes[0] if len(bands) == 1 else np.stack(planes, axis=-1)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (r.width, r.height))
        fh.write(np.ascontiguousarray(data).tobytes())
    return bounds
