"""Similar-pixel self-replacement guided by a reference image ("STMRF-lite").

Every missing pixel ``q`` copies all bands of one clear donor pixel ``d(q)``
of the target itself. Donors are chosen on the reference image by minimising
the labelling energy::

    E = sum_q D(q, d(q)) + lambda * sum_{q ~ q'} V(d(q), d(q'))

``D`` is the mean squared reference difference between the patches around
``q`` and ``d(q)``; ``V`` is the L1 distance between the two donor offsets,
truncated at 4, over 4-adjacent missing pixels. Each pixel keeps its top-K
donors by ``D``; the labelling starts from the best of each and is refined
by iterated conditional modes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .raster import Mask, Raster


class StmrfError(ValueError):
    pass


@dataclass(frozen=True)
class StmrfParams:
    patch_radius: int = 2
    search_stride: int = 1
    lambda_smooth: float = 0.5
    icm_iters: int = 5
    candidate_count: int = 10

    def __post_init__(self):
        if self.patch_radius < 0:
            raise ValueError(f"patch_radius must be >= 0, got {self.patch_radius}")
        if self.search_stride < 1:
            raise ValueError(f"search_stride must be >= 1, got {self.search_stride}")
        if self.lambda_smooth < 0:
            raise ValueError(f"lambda_smooth must be >= 0, got {self.lambda_smooth}")
        if self.icm_iters < 0:
            raise ValueError(f"icm_iters must be >= 0, got {self.icm_iters}")
        if self.candidate_count < 1:
            raise ValueError(f"candidate_count must be >= 1, got {self.candidate_count}")


@dataclass
class StmrfDiagnostics:
    energy_trace: list[float] = field(default_factory=list)
    donors: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def final_energy(self) -> float:
        return self.energy_trace[-1] if self.energy_trace else 0.0


def donor_pixels(m: Mask, stride: int) -> np.ndarray:
    """Clear pixels on the search grid, row-major; all clear pixels if the grid misses them."""
    clear = ~m.cells
    grid = np.zeros_like(clear)
    grid[::stride, ::stride] = True
    donors = np.argwhere(clear & grid)
    if donors.size == 0:
        donors = np.argwhere(clear)
    return donors.astype(np.int64)


def missing_neighbours(m: Mask, qs: np.ndarray) -> np.ndarray:
    """Index table (n, 4) of 4-adjacent missing pixels, -1 where there is none."""
    H, W = m.shape
    index = np.full(m.shape, -1, dtype=np.int64)
    index[qs[:, 0], qs[:, 1]] = np.arange(len(qs))
    nbr = np.full((len(qs), 4), -1, dtype=np.int64)
    for k, (dr, dc) in enumerate(((-1, 0), (1, 0), (0, -1), (0, 1))):
        r, c = qs[:, 0] + dr, qs[:, 1] + dc
        ok = (r >= 0) & (r < H) & (c >= 0) & (c < W)
        nbr[:, k] = np.where(ok, index[np.clip(r, 0, H - 1), np.clip(c, 0, W - 1)], -1)
    return nbr


def stmrf_reconstruct(
    target: Raster,
    m: Mask,
    reference: Raster,
    p: Optional[StmrfParams] = None,
    full_output: bool = False,
):
    """Fill masked pixels with donor pixels from the clear part of ``target``.

    Returns the filled Raster, or ``(Raster, StmrfDiagnostics)`` with
    ``full_output``; the diagnostics hold the energy after initialisation
    and after every ICM sweep, plus the chosen donor of each missing pixel.
    """
    p = p or StmrfParams()
    if target.values.shape != reference.values.shape:
        raise StmrfError(
            f"target {target.values.shape} and reference {reference.values.shape} differ"
        )
    if m.shape != target.shape:
        raise StmrfError(f"mask {m.shape} does not match raster {target.shape}")

    qs = np.argwhere(m.cells).astype(np.int64)
    if qs.size == 0:
        diag = StmrfDiagnostics(energy_trace=[0.0], donors=np.empty((0, 2), dtype=np.int64))
        return (target, diag) if full_output else target
    if m.count == m.cells.size:
        raise StmrfError("clear region is empty; no donors available")

    donors = donor_pixels(m, p.search_stride)
    omega = m.cells.astype(np.uint8)
    cand, cost = kernels.active.stmrf_candidates(
        reference.values, omega, qs, donors, p.patch_radius, p.candidate_count
    )
    assert cand.shape[1] > 0, "candidate generation found no donors"
    nbr = missing_neighbours(m, qs)
    labels0 = np.zeros(len(qs), dtype=np.int64)
    labels, trace = kernels.active.icm(
        cand, cost, donors, qs, nbr, labels0, float(p.lambda_smooth), p.icm_iters
    )
    chosen = donors[cand[np.arange(len(qs)), labels]]
    out = target.values.copy()
    out[:, qs[:, 0], qs[:, 1]] = target.values[:, chosen[:, 0], chosen[:, 1]]
    result = Raster(out)
    if full_output:
        return result, StmrfDiagnostics(energy_trace=[float(e) for e in trace], donors=chosen)
    return result


def labelling_energy(reference: Raster, m: Mask, chosen: np.ndarray, p: StmrfParams) -> float:
    """Energy of an explicit donor assignment, computed from scratch.

    ``chosen`` holds the donor (row, col) for each missing pixel in row-major
    order. Independent of the candidate pruning; used to check the solver.
    """
    qs = np.argwhere(m.cells)
    H, W = m.shape
    ref = reference.values
    r = p.patch_radius
    unary = 0.0
    for (qr, qc), (dr, dc) in zip(qs, chosen):
        total, used = 0.0, 0
        for oy in range(-r, r + 1):
            for ox in range(-r, r + 1):
                pr, pc, er, ec = qr + oy, qc + ox, dr + oy, dc + ox
                if not (0 <= pr < H and 0 <= pc < W and 0 <= er < H and 0 <= ec < W):
                    continue
                if (oy, ox) != (0, 0) and (m.cells[pr, pc] or m.cells[er, ec]):
                    continue
                total += float(((ref[:, er, ec] - ref[:, pr, pc]) ** 2).sum())
                used += ref.shape[0]
        unary += total / used
    nbr = missing_neighbours(m, qs.astype(np.int64))
    off = chosen - qs
    pair = 0
    for i in range(len(qs)):
        for j in nbr[i]:
            if j > i:
                pair += min(int(np.abs(off[i] - off[j]).sum()), 4)
    return unary + p.lambda_smooth * pair
