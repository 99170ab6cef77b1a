"""Fusion-then-Poisson reconstruction and a uniform entry point for all methods.

The proposed reconstruction predicts the fine image at the cloudy date with
STARFM and then re-levels that prediction inside the mask with a Poisson
solve whose boundary comes from the clear part of the cloudy image.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

import numpy as np

from .poisson import EmptyRegionError, SolverOptions, poisson_adjust, poisson_replace
from .raster import Raster, SceneBundle, validate_bundle
from .starfm import StarfmParams, prediction_window, starfm_predict
from .stmrf import StmrfParams, stmrf_reconstruct
from .wlr import WlrParams, wlr_reconstruct


class MethodId(str, Enum):
    POISSON = "poisson"
    WLR = "wlr"
    STMRF = "stmrf"
    PROPOSED = "proposed"


class ParameterMismatchError(TypeError):
    pass


class BundleError(ValueError):
    pass


@dataclass(frozen=True)
class ProposedParams:
    starfm: StarfmParams = field(default_factory=StarfmParams)
    solver: SolverOptions = field(default_factory=SolverOptions)


MethodParams = Union[SolverOptions, WlrParams, StmrfParams, ProposedParams]

PARAM_TYPES = {
    MethodId.POISSON: SolverOptions,
    MethodId.WLR: WlrParams,
    MethodId.STMRF: StmrfParams,
    MethodId.PROPOSED: ProposedParams,
}


@dataclass
class ReconstructionResult:
    output: Raster
    diagnostics: dict = field(default_factory=dict)
    wall_time: float = 0.0


def _check(b: SceneBundle, require_lr: bool):
    errors = validate_bundle(b, require_lr=require_lr)
    if errors:
        raise BundleError("; ".join(errors))
    if b.mask.count == 0:
        raise EmptyRegionError("mask is empty; nothing to reconstruct")


def boundary_seam(target: Raster, prediction: Raster, mask) -> float:
    """Largest |prediction - target| over the clear cells bordering the mask."""
    ring = mask.boundary()
    if not ring.any():
        return 0.0
    return float(np.abs(prediction.values[:, ring] - target.values[:, ring]).max())


def proposed_reconstruct(
    b: SceneBundle,
    sp: Optional[StarfmParams] = None,
    po: Optional[SolverOptions] = None,
) -> ReconstructionResult:
    """STARFM prediction followed by Poisson adjustment against the cloudy image."""
    sp = sp or StarfmParams()
    po = po or SolverOptions()
    start = time.perf_counter()
    _check(b, require_lr=True)
    prediction = starfm_predict(b.ref_hr, b.ref_lr, b.target_lr, b.scale, sp, region=b.mask)
    seam = boundary_seam(b.target_hr, prediction, b.mask)
    output, info = poisson_adjust(b.target_hr, b.mask, prediction, po, full_output=True)
    r0, r1, c0, c1 = prediction_window(b.mask, b.target_hr.shape, sp.window // 2)
    diagnostics = {
        "poisson_residual": info.max_residual,
        "poisson_iterations": int(sum(info.iterations)),
        "border_cells_removed": info.border_cells_removed,
        "seam_before_adjust": seam,
        "fused_pixels": int((r1 - r0) * (c1 - c0)),
    }
    return ReconstructionResult(output, diagnostics, time.perf_counter() - start)


def reconstruct(
    method: Union[MethodId, str],
    b: SceneBundle,
    params: Optional[MethodParams] = None,
) -> ReconstructionResult:
    """Run one reconstruction method on a bundle.

    ``params`` must be the parameter type of ``method`` (or None for
    defaults). Same-sensor methods ignore the coarse rasters.
    """
    try:
        method = MethodId(method)
    except ValueError as exc:
        raise ParameterMismatchError(f"unknown method {method!r}") from exc
    expected = PARAM_TYPES[method]
    if params is None:
        params = expected()
    elif not isinstance(params, expected):
        raise ParameterMismatchError(
            f"method {method.value} takes {expected.__name__}, got {type(params).__name__}"
        )

    if method is MethodId.PROPOSED:
        return proposed_reconstruct(b, params.starfm, params.solver)

    start = time.perf_counter()
    _check(b, require_lr=False)
    if method is MethodId.POISSON:
        output, info = poisson_replace(b.target_hr, b.mask, b.ref_hr, params, full_output=True)
        diagnostics = {
            "poisson_residual": info.max_residual,
            "poisson_iterations": int(sum(info.iterations)),
            "border_cells_removed": info.border_cells_removed,
        }
    elif method is MethodId.WLR:
        output, info = wlr_reconstruct(b.target_hr, b.mask, b.ref_hr, params, full_output=True)
        diagnostics = {
            "fallback_count": info.fallback_count,
            "starved_count": info.starved,
            "degenerate_count": info.degenerate,
            "regression_count": info.regression,
        }
    else:
        output, info = stmrf_reconstruct(b.target_hr, b.mask, b.ref_hr, params, full_output=True)
        diagnostics = {
            "final_energy": info.final_energy,
            "initial_energy": info.energy_trace[0],
            "icm_sweeps": len(info.energy_trace) - 1,
        }
    return ReconstructionResult(output, diagnostics, time.perf_counter() - start)
