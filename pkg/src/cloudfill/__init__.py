"""Multi-temporal cloud removal for multi-band rasters.

Four reconstruction methods share one entry point, :func:`reconstruct`:
Poisson temporal replacement, windowed weighted linear regression, MRF
similar-pixel replacement, and STARFM fusion followed by Poisson adjustment.
"""

from .cloud_sim import CloudShapeParams, apply_mask, simulate_mask
from .harness import ExperimentConfig, build_scene, load_config, run_experiment
from .kernels import BACKEND
from .metrics import MetricsReport, cc, evaluate, nmse, uiqi
from .pipeline import MethodId, ProposedParams, ReconstructionResult, reconstruct
from .poisson import GuidanceField, SolverOptions, gradient_field, poisson_replace, poisson_solve
from .raster import (
    Mask,
    Raster,
    SceneBundle,
    block_downsample,
    load_mask,
    load_raster,
    save_mask,
    save_raster,
)
from .starfm import StarfmParams, starfm_predict
from .stmrf import StmrfParams, stmrf_reconstruct
from .wlr import WlrParams, wlr_reconstruct

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CloudShapeParams",
    "ExperimentConfig",
    "GuidanceField",
    "Mask",
    "MethodId",
    "MetricsReport",
    "ProposedParams",
    "Raster",
    "ReconstructionResult",
    "SceneBundle",
    "SolverOptions",
    "StarfmParams",
    "StmrfParams",
    "WlrParams",
    "apply_mask",
    "block_downsample",
    "build_scene",
    "cc",
    "evaluate",
    "gradient_field",
    "load_config",
    "load_mask",
    "load_raster",
    "nmse",
    "poisson_replace",
    "poisson_solve",
    "reconstruct",
    "run_experiment",
    "save_mask",
    "save_raster",
    "simulate_mask",
    "starfm_predict",
    "stmrf_reconstruct",
    "uiqi",
    "wlr_reconstruct",
]
