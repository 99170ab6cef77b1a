"""Experiment runner: build a simulated scene, run methods, write reports.

An experiment config is a JSON document::

    {
      "target": "truth_t0",            # clean fine image at the cloudy date
      "reference": "ref_t1",           # clear fine image at the reference date
      "scale": 8,
      "seed": 0,
      "mask": {"coverage": 0.25, "smoothness": 4, "margin": 1},
      "lr_mode": "derive",             # or {"ref_lr": "...", "target_lr": "..."}
      "lr_bias": {"gain": 1.0, "offset": 0.0},
      "methods": ["poisson", {"method": "wlr", "params": {"n_similar": 40}}],
      "out_dir": "out"
    }

``mask`` may also be a path to a mask raster. Paths are resolved against the
config file's directory. The mask seed defaults to the top-level ``seed``,
which is the only source of randomness. ``gain`` and ``offset`` take a number
or one value per band.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import kernels
from .cloud_sim import CloudShapeParams, apply_mask, simulate_mask
from .metrics import MetricsReport, evaluate, format_csv
from .pipeline import (
    PARAM_TYPES,
    MethodId,
    ProposedParams,
    ReconstructionResult,
    reconstruct,
)
from .poisson import SolverOptions
from .raster import (
    Raster,
    SceneBundle,
    block_downsample,
    export_pnm,
    load_mask,
    load_raster,
    save_mask,
    save_raster,
    validate_bundle,
)
from .starfm import StarfmParams

log = logging.getLogger(__name__)

FILL_VALUE = 1.0


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LrBias:
    gain: Union[float, tuple[float, ...]] = 1.0
    offset: Union[float, tuple[float, ...]] = 0.0

    def apply(self, r: Raster) -> Raster:
        gain = np.broadcast_to(np.asarray(self.gain, dtype=np.float64), (r.bands,))
        offset = np.broadcast_to(np.asarray(self.offset, dtype=np.float64), (r.bands,))
        if np.all(gain == 1.0) and np.all(offset == 0.0):
            return r
        return Raster(r.values * gain[:, None, None] + offset[:, None, None])


@dataclass(frozen=True)
class MethodSpec:
    method: MethodId
    params: object


@dataclass(frozen=True)
class ExperimentConfig:
    target_path: Path
    ref_path: Path
    scale: int = 8
    mask: Union[CloudShapeParams, Path] = field(default_factory=CloudShapeParams)
    lr_mode: Union[str, tuple[Path, Path]] = "derive"
    lr_bias: LrBias = field(default_factory=LrBias)
    methods: tuple[MethodSpec, ...] = ()
    out_dir: Path = Path("out")
    seed: int = 0

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("at least one method is required")
        if int(self.scale) != self.scale or self.scale < 1:
            raise ConfigError(f"scale must be an integer >= 1, got {self.scale!r}")


# -- config parsing ---------------------------------------------------------

# harness spelling -> dataclass field, per method
_PARAM_ALIASES = {
    MethodId.POISSON: {},
    MethodId.WLR: {"window": "initial_window"},
    MethodId.STMRF: {"lambda": "lambda_smooth", "candidates": "candidate_count"},
}


def _build(cls, raw: dict, aliases: dict, where: str):
    names = {f.name for f in fields(cls)}
    kwargs = {}
    for key, val in raw.items():
        name = aliases.get(key, key)
        if name not in names:
            raise ConfigError(f"{where}: unknown parameter {key!r}")
        kwargs[name] = val
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def method_params(method: MethodId, raw: Optional[dict]):
    """Parameter object for ``method`` from a flat dict."""
    raw = dict(raw or {})
    where = f"method {method.value}"
    if method is MethodId.PROPOSED:
        solver = {k: raw.pop(k) for k in ("tol", "max_iters") if k in raw}
        fusion_aliases = {"fusion_window": "window"}
        return ProposedParams(
            starfm=_build(StarfmParams, raw, fusion_aliases, where),
            solver=_build(SolverOptions, solver, {}, where),
        )
    return _build(PARAM_TYPES[method], raw, _PARAM_ALIASES[method], where)


def _method_spec(entry) -> MethodSpec:
    if isinstance(entry, str):
        entry = {"method": entry}
    if not isinstance(entry, dict) or "method" not in entry:
        raise ConfigError(f"bad method entry {entry!r}")
    extra = set(entry) - {"method", "params"}
    if extra:
        raise ConfigError(f"method entry has unknown keys {sorted(extra)}")
    try:
        method = MethodId(entry["method"])
    except ValueError as exc:
        raise ConfigError(f"unknown method {entry['method']!r}") from exc
    return MethodSpec(method, method_params(method, entry.get("params")))


def parse_config(doc: dict, base_dir: Union[str, Path] = ".") -> ExperimentConfig:
    base = Path(base_dir)
    known = {"target", "reference", "scale", "seed", "mask", "lr_mode", "lr_bias", "methods", "out_dir"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    for key in ("target", "reference", "methods"):
        if key not in doc:
            raise ConfigError(f"config is missing {key!r}")

    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"seed must be an integer, got {seed!r}")

    raw_mask = doc.get("mask", {})
    if isinstance(raw_mask, str):
        mask: Union[CloudShapeParams, Path] = base / raw_mask
    elif isinstance(raw_mask, dict):
        aliases = {"coverage": "coverage_fraction"}
        mask = _build(CloudShapeParams, {"seed": seed, **raw_mask}, aliases, "mask")
    else:
        raise ConfigError("mask must be a path or an object")

    raw_lr = doc.get("lr_mode", "derive")
    if raw_lr == "derive":
        lr_mode: Union[str, tuple[Path, Path]] = "derive"
    elif isinstance(raw_lr, dict) and set(raw_lr) == {"ref_lr", "target_lr"}:
        lr_mode = (base / raw_lr["ref_lr"], base / raw_lr["target_lr"])
    else:
        raise ConfigError("lr_mode must be 'derive' or {'ref_lr': ..., 'target_lr': ...}")

    raw_bias = doc.get("lr_bias", {})
    if not isinstance(raw_bias, dict):
        raise ConfigError("lr_bias must be an object")
    bias = _build(
        LrBias,
        {k: tuple(v) if isinstance(v, list) else v for k, v in raw_bias.items()},
        {},
        "lr_bias",
    )

    methods = doc["methods"]
    if not isinstance(methods, list):
        raise ConfigError("methods must be a list")
    return ExperimentConfig(
        target_path=base / doc["target"],
        ref_path=base / doc["reference"],
        scale=doc.get("scale", 8),
        mask=mask,
        lr_mode=lr_mode,
        lr_bias=bias,
        methods=tuple(_method_spec(m) for m in methods),
        out_dir=base / doc.get("out_dir", "out"),
        seed=seed,
    )


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return parse_config(doc, path.parent)


def config_record(cfg: ExperimentConfig) -> dict:
    """JSON-ready record of every parameter, defaults filled in."""
    def plain(obj):
        if isinstance(obj, Path):
            return str(obj)
        if isinstance(obj, MethodId):
            return obj.value
        if isinstance(obj, tuple):
            return [plain(x) for x in obj]
        if isinstance(obj, dict):
            return {k: plain(v) for k, v in obj.items()}
        return obj

    rec = {
        "target": cfg.target_path,
        "reference": cfg.ref_path,
        "scale": cfg.scale,
        "seed": cfg.seed,
        "mask": asdict(cfg.mask) if isinstance(cfg.mask, CloudShapeParams) else cfg.mask,
        "lr_mode": "derive" if cfg.lr_mode == "derive" else {
            "ref_lr": cfg.lr_mode[0], "target_lr": cfg.lr_mode[1]},
        "lr_bias": asdict(cfg.lr_bias),
        "methods": [{"method": m.method, "params": asdict(m.params)} for m in cfg.methods],
        "out_dir": cfg.out_dir,
    }
    return plain(rec)


# -- running ----------------------------------------------------------------


def build_scene(cfg: ExperimentConfig) -> tuple[SceneBundle, Raster]:
    """Load the scene pair, cloud the target and derive or load the coarse pair."""
    original = load_raster(cfg.target_path)
    ref_hr = load_raster(cfg.ref_path)
    if isinstance(cfg.mask, CloudShapeParams):
        mask = simulate_mask(original.width, original.height, cfg.mask)
    else:
        mask = load_mask(cfg.mask)
    if mask.shape != original.shape:
        raise ConfigError(f"mask {mask.shape} does not match target {original.shape}")
    target_hr = apply_mask(original, mask, FILL_VALUE)

    if cfg.lr_mode == "derive":
        ref_lr = cfg.lr_bias.apply(block_downsample(ref_hr, cfg.scale))
        target_lr = cfg.lr_bias.apply(block_downsample(original, cfg.scale))
    else:
        ref_lr = cfg.lr_bias.apply(load_raster(cfg.lr_mode[0]))
        target_lr = cfg.lr_bias.apply(load_raster(cfg.lr_mode[1]))
    bundle = SceneBundle(target_hr, mask, ref_hr, ref_lr, target_lr, cfg.scale)
    errors = validate_bundle(bundle)
    if errors:
        raise ConfigError("; ".join(errors))
    return bundle, original


@dataclass
class MethodOutcome:
    method: str
    result: Optional[ReconstructionResult] = None
    metrics: Optional[MetricsReport] = None
    error: Optional[str] = None


@dataclass
class ExperimentReport:
    outcomes: list[MethodOutcome]
    csv_text: str
    json_doc: dict
    summary: str

    @property
    def failed(self) -> list[str]:
        return [o.method for o in self.outcomes if o.error]

    @property
    def exit_code(self) -> int:
        return 2 if self.failed else 0


def _run_one(spec: MethodSpec, bundle: SceneBundle, original: Raster) -> MethodOutcome:
    name = spec.method.value
    try:
        result = reconstruct(spec.method, bundle, spec.params)
        metrics = evaluate(original, result.output, bundle.mask)
    except Exception as exc:  # recorded per method; the others still run
        log.warning("method %s failed: %s", name, exc)
        return MethodOutcome(name, error=f"{type(exc).__name__}: {exc}")
    return MethodOutcome(name, result=result, metrics=metrics)


def summary_table(outcomes: list[MethodOutcome]) -> str:
    """CC/NMSE/UIQI rows by method columns, four decimals."""
    names = [o.method for o in outcomes]
    width = max(10, *(len(n) + 2 for n in names))
    lines = ["".ljust(6) + "".join(n.rjust(width) for n in names)]
    for label, attr in (("CC", "mean_cc"), ("NMSE", "mean_nmse"), ("UIQI", "mean_uiqi")):
        cells = []
        for o in outcomes:
            cells.append(f"{getattr(o.metrics, attr):.4f}" if o.metrics else "failed")
        lines.append(label.ljust(6) + "".join(c.rjust(width) for c in cells))
    return "\n".join(lines) + "\n"


def _preview(r: Raster, path: Path) -> list[list[float]]:
    suffix = ".ppm" if r.bands >= 3 else ".pgm"
    return [list(b) for b in export_pnm(r, path.with_suffix(suffix))]


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> ExperimentReport:
    """Run every configured method and write rasters, previews and reports.

    Files written to ``cfg.out_dir``: ``<method>.json/.rasb`` outputs, the
    scene inputs (``mask``, ``cloudy``, ``ref_lr``, ``target_lr``), previews,
    ``metrics.csv``, ``report.json`` and ``summary.txt``. The
    report files do not depend on timing or on ``workers``.
    """
    bundle, original = build_scene(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_one, s, bundle, original) for s in cfg.methods]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = [_run_one(s, bundle, original) for s in cfg.methods]

    previews = {
        "original": _preview(original, out / "original"),
        "cloudy": _preview(bundle.target_hr, out / "cloudy"),
        "mask": _preview(bundle.mask.to_raster(), out / "mask"),
    }
    save_mask(bundle.mask, out / "mask")
    save_raster(bundle.target_hr, out / "cloudy")
    save_raster(bundle.ref_lr, out / "ref_lr")
    save_raster(bundle.target_lr, out / "target_lr")
    rows = []
    methods_doc = []
    for o in outcomes:
        entry: dict = {"method": o.method}
        if o.error:
            entry["error"] = o.error
        else:
            save_raster(o.result.output, out / o.method)
            previews[o.method] = _preview(o.result.output, out / o.method)
            rows.extend(o.metrics.csv_rows(o.method))
            entry["metrics"] = o.metrics.to_dict()
            entry["diagnostics"] = o.result.diagnostics
            log.info("%s finished in %.3f s", o.method, o.result.wall_time)
        methods_doc.append(entry)

    csv_text = format_csv(rows)
    summary = summary_table(outcomes)
    doc = {
        "config": config_record(cfg),
        "backend": kernels.BACKEND,
        "mask_cells": bundle.mask.count,
        "mask_coverage": bundle.mask.coverage,
        "methods": methods_doc,
        "preview_stretch": previews,
    }
    (out / "metrics.csv").write_text(csv_text)
    (out / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    (out / "summary.txt").write_text(summary)
    return ExperimentReport(outcomes, csv_text, doc, summary)
