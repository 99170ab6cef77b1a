"""Discrete Poisson solve over masked regions.

The unknowns are the cells of the mask region; cells outside it supply
Dirichlet values. For each unknown ``p`` and band::

    4 f(p) - sum_{q in N4(p)} f(q) = -div g(p)

with ``div g(p) = gx(p) - gx(p - x) + gy(p) - gy(p - y)``. Taking ``g`` as the
forward-difference gradient of an image makes ``div g`` its 5-point
Laplacian, which is how texture is cloned from a reference while brightness
follows the target boundary.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from . import kernels
from .raster import FOUR_CONNECTED, Mask, Raster

MAX_ITERS_CAP = 100_000


class PoissonError(ValueError):
    pass


class EmptyRegionError(PoissonError):
    pass


class UnboundedComponentError(PoissonError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class BorderCellsWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SolverOptions:
    """CG stopping rule. ``max_iters=None`` means ``min(10 |region|, 100000)``."""

    tol: float = 1e-8
    max_iters: Optional[int] = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        if self.max_iters is not None and self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")

    def iteration_cap(self, n_unknowns: int) -> int:
        if self.max_iters is not None:
            return self.max_iters
        return max(1, min(10 * n_unknowns, MAX_ITERS_CAP))


@dataclass(frozen=True)
class GuidanceField:
    """Per-band forward-difference vector field, arrays of shape (bands, h, w)."""

    gx: np.ndarray
    gy: np.ndarray

    def __post_init__(self):
        if self.gx.shape != self.gy.shape or self.gx.ndim != 3:
            raise ValueError("gx and gy must share a (bands, height, width) shape")
        if not (np.all(np.isfinite(self.gx)) and np.all(np.isfinite(self.gy))):
            raise ValueError("guidance field must be finite")

    def divergence(self) -> np.ndarray:
        """Backward-difference divergence; the zero padding matches ``gradient_field``."""
        div = self.gx.copy()
        div[:, :, 1:] -= self.gx[:, :, :-1]
        div += self.gy
        div[:, 1:, :] -= self.gy[:, :-1, :]
        return div


@dataclass
class SolveInfo:
    """Diagnostics of one masked Poisson solve."""

    residuals: list[float] = field(default_factory=list)
    iterations: list[int] = field(default_factory=list)
    n_unknowns: int = 0
    n_components: int = 0
    border_cells_removed: int = 0

    @property
    def max_residual(self) -> float:
        return max(self.residuals) if self.residuals else 0.0


def gradient_field(src: Raster) -> GuidanceField:
    v = src.values
    gx = np.zeros_like(v)
    gy = np.zeros_like(v)
    gx[:, :, :-1] = v[:, :, 1:] - v[:, :, :-1]
    gy[:, :-1, :] = v[:, 1:, :] - v[:, :-1, :]
    return GuidanceField(gx, gy)


def interior_region(m: Mask) -> tuple[np.ndarray, int]:
    """Mask cells off the image border, and how many border cells were dropped."""
    cells = m.cells.copy()
    inner = np.zeros_like(cells)
    inner[1:-1, 1:-1] = cells[1:-1, 1:-1]
    return inner, int(cells.sum() - inner.sum())


def _neighbour_table(region: np.ndarray, index: np.ndarray, rows, cols):
    H, W = region.shape
    nbr = np.full((rows.size, 4), -1, dtype=np.int64)
    for k, (dr, dc) in enumerate(((-1, 0), (1, 0), (0, -1), (0, 1))):
        r, c = rows + dr, cols + dc
        ok = (r >= 0) & (r < H) & (c >= 0) & (c < W)
        rr, cc = np.clip(r, 0, H - 1), np.clip(c, 0, W - 1)
        inside = ok & region[rr, cc]
        nbr[:, k] = np.where(inside, index[rr, cc], -1)
    return nbr


def poisson_solve(
    boundary_src: Raster,
    m: Mask,
    g: GuidanceField,
    opts: Optional[SolverOptions] = None,
    full_output: bool = False,
):
    """Solve the masked Poisson equation band by band.

    Mask cells on the image border cannot be unknowns (they have no
    complete stencil); they are dropped from the region, keep the
    ``boundary_src`` value and trigger a :class:`BorderCellsWarning`.

    Returns
    -------
    Raster, or (Raster, SolveInfo) if ``full_output``.

    Raises
    ------
    EmptyRegionError
        If no unknown cells remain.
    ConvergenceError
        If CG misses ``opts.tol`` within the iteration cap.
    """
    opts = opts or SolverOptions()
    if m.shape != boundary_src.shape:
        raise PoissonError(f"mask {m.shape} does not match raster {boundary_src.shape}")
    if g.gx.shape != boundary_src.values.shape:
        raise PoissonError(
            f"guidance {g.gx.shape} does not match raster {boundary_src.values.shape}"
        )

    region, dropped = interior_region(m)
    if dropped:
        warnings.warn(
            f"{dropped} mask cell(s) on the image border kept as known values",
            BorderCellsWarning,
            stacklevel=2,
        )
    if not region.any():
        raise EmptyRegionError("no interior cells to solve for")

    labels, n_comp = ndimage.label(region, structure=FOUR_CONNECTED)
    # row-major unknown ordering
    rows, cols = np.nonzero(region)
    index = np.full(region.shape, -1, dtype=np.int64)
    index[rows, cols] = np.arange(rows.size)
    nbr_all = _neighbour_table(region, index, rows, cols)
    comp_of = labels[rows, cols]
    outside_count = (nbr_all < 0).sum(axis=1)
    for c in range(1, n_comp + 1):
        if not outside_count[comp_of == c].any():
            raise UnboundedComponentError(f"region component {c} has no boundary cells")

    # known-value contribution of neighbours outside the region
    src = boundary_src.values
    div = g.divergence()
    out = src.copy()
    info = SolveInfo(n_unknowns=int(rows.size), n_components=int(n_comp), border_cells_removed=dropped)

    members = [np.flatnonzero(comp_of == c) for c in range(1, n_comp + 1)]
    local = np.empty(rows.size, dtype=np.int64)
    comp_nbr = []
    for idx in members:
        local[idx] = np.arange(idx.size)
        sub = nbr_all[idx]
        comp_nbr.append(np.where(sub >= 0, local[np.maximum(sub, 0)], -1))

    for b in range(boundary_src.bands):
        rhs = -div[b][rows, cols]
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            r, c = rows + dr, cols + dc
            known = ~region[r, c]
            rhs = rhs + np.where(known, src[b][r, c], 0.0)
        x = np.empty(rows.size)
        iters = 0
        for idx, nb in zip(members, comp_nbr):
            sub_rhs = rhs[idx]
            cap = opts.iteration_cap(idx.size)
            xc, it, rel = kernels.active.cg_solve(nb, sub_rhs, np.zeros(idx.size), opts.tol, cap)
            if rel > opts.tol:
                raise ConvergenceError(
                    f"band {b}: CG stopped after {it} iterations at relative residual "
                    f"{rel:.3e} > tol {opts.tol:.1e}",
                    rel,
                )
            x[idx] = xc
            iters += it
        resid = rhs - kernels.active.laplacian_apply(nbr_all, x)
        bnorm = float(np.sqrt(np.add.reduce(rhs * rhs)))
        rel_all = float(np.sqrt(np.add.reduce(resid * resid))) / bnorm if bnorm > 0 else 0.0
        info.residuals.append(rel_all)
        info.iterations.append(iters)
        out[b][rows, cols] = x
    result = Raster(out)
    return (result, info) if full_output else result


def poisson_replace(
    target: Raster,
    m: Mask,
    reference: Raster,
    opts: Optional[SolverOptions] = None,
    full_output: bool = False,
):
    """Clone the reference texture into the mask, matching target brightness at its edge."""
    if target.values.shape != reference.values.shape:
        raise PoissonError(
            f"target {target.values.shape} and reference {reference.values.shape} differ"
        )
    return poisson_solve(target, m, gradient_field(reference), opts, full_output=full_output)


def poisson_adjust(
    target: Raster,
    m: Mask,
    prediction: Raster,
    opts: Optional[SolverOptions] = None,
    full_output: bool = False,
):
    """Re-level a preliminary prediction so it joins the clear target seamlessly.

    Only the prediction's gradients inside the mask and on its one-cell
    dilation are used.
    """
    return poisson_replace(target, m, prediction, opts, full_output=full_output)
