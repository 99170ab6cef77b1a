"""Command-line interface.

Exit codes: 0 on success, 2 when a reconstruction method fails on valid
inputs (some or all methods of an experiment), 1 on bad arguments, configs
or input files. Numbers are printed with four decimals; files written by
``experiment`` keep full precision.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import kernels
from .cloud_sim import CloudShapeParams, MaskSimulationError, simulate_mask
from .harness import (
    ConfigError,
    LrBias,
    MethodOutcome,
    load_config,
    method_params,
    run_experiment,
    summary_table,
)
from .metrics import MetricError, evaluate
from .pipeline import MethodId, reconstruct
from .raster import (
    RasterFormatError,
    SceneBundle,
    block_downsample,
    export_pnm,
    load_mask,
    load_raster,
    save_mask,
    save_raster,
)
from .scenes import KINDS, ChangeSpec, change_pair

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_METHOD = 2

# CLI flag -> (parameter name understood by harness.method_params, methods using it)
METHOD_FLAGS = {
    "tol": ("tol", {MethodId.POISSON, MethodId.PROPOSED}),
    "max_iters": ("max_iters", {MethodId.POISSON, MethodId.PROPOSED}),
    "initial_window": ("initial_window", {MethodId.WLR}),
    "max_window": ("max_window", {MethodId.WLR}),
    "min_samples": ("min_samples", {MethodId.WLR}),
    "n_similar": ("n_similar", {MethodId.WLR}),
    "patch_radius": ("patch_radius", {MethodId.STMRF}),
    "search_stride": ("search_stride", {MethodId.STMRF}),
    "lambda_smooth": ("lambda_smooth", {MethodId.STMRF}),
    "icm_iters": ("icm_iters", {MethodId.STMRF}),
    "candidate_count": ("candidate_count", {MethodId.STMRF}),
    "fusion_window": ("window", {MethodId.PROPOSED}),
    "n_classes": ("n_classes", {MethodId.PROPOSED}),
    "eps": ("eps", {MethodId.PROPOSED}),
    "resample": ("resample", {MethodId.PROPOSED}),
}

FLAG_NAMES = {
    "initial_window": "--window",
    "lambda_smooth": "--lambda",
    "candidate_count": "--candidates",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _fmt(x) -> str:
    return f"{x:.4f}" if isinstance(x, float) else str(x)


# -- subcommands ------------------------------------------------------------


def cmd_simulate_mask(args) -> int:
    p = CloudShapeParams(args.coverage, args.smoothness, args.seed, args.margin)
    m = simulate_mask(args.width, args.height, p)
    save_mask(m, args.out)
    print(f"mask {args.width}x{args.height}: {m.count} cells, coverage {m.coverage:.4f}")
    return EXIT_OK


def cmd_degrade(args) -> int:
    r = load_raster(args.input)
    lr = LrBias(args.gain, args.offset).apply(block_downsample(r, args.scale))
    save_raster(lr, args.out)
    print(f"degraded {r.width}x{r.height} -> {lr.width}x{lr.height} (scale {args.scale})")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    method = MethodId(args.method)
    raw = {}
    for flag, (name, users) in METHOD_FLAGS.items():
        val = getattr(args, flag)
        if val is None:
            continue
        if method not in users:
            shown = FLAG_NAMES.get(flag, "--" + flag.replace("_", "-"))
            raise ConfigError(f"{shown} does not apply to method {method.value}")
        raw[name] = val
    params = method_params(method, raw)

    target = load_raster(args.target)
    mask = load_mask(args.mask)
    ref = load_raster(args.ref)
    ref_lr = load_raster(args.ref_lr) if args.ref_lr else None
    target_lr = load_raster(args.target_lr) if args.target_lr else None
    if method is MethodId.PROPOSED and (ref_lr is None or target_lr is None or args.scale is None):
        raise ConfigError("method proposed needs --ref-lr, --target-lr and --scale")
    bundle = SceneBundle(target, mask, ref, ref_lr, target_lr, args.scale)
    try:
        result = reconstruct(method, bundle, params)
    except Exception as exc:
        print(f"method {method.value} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_METHOD
    save_raster(result.output, args.out)
    for key, val in result.diagnostics.items():
        print(f"{key}: {_fmt(val)}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    report = evaluate(load_raster(args.original), load_raster(args.recon), load_mask(args.mask))
    print(summary_table([MethodOutcome(args.label, metrics=report)]), end="")
    if args.per_band:
        for b, m in enumerate(report.per_band):
            print(f"band {b}: cc {m.cc:.4f}  nmse {m.nmse:.4f}  uiqi {m.uiqi:.4f}")
    if args.json:
        Path(args.json).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = load_config(args.config)
    report = run_experiment(cfg, workers=args.workers)
    print(report.summary, end="")
    for o in report.outcomes:
        if o.error:
            print(f"method {o.method} failed: {o.error}", file=sys.stderr)
    print(f"wrote {cfg.out_dir}")
    return EXIT_METHOD if report.failed else EXIT_OK


def cmd_export_pgm(args) -> int:
    r = load_raster(args.input)
    bands = [int(b) for b in args.bands.split(",")] if args.bands else None
    bounds = export_pnm(r, args.out, bands)
    for b, (lo, hi) in zip(bands or range(len(bounds)), bounds):
        print(f"band {b}: stretch [{lo:.4f}, {hi:.4f}]")
    return EXIT_OK


def cmd_synth_scene(args) -> int:
    """Write a synthetic change pair and a ready-to-run experiment config."""
    out = Path(args.out_dir)
    shape = CloudShapeParams(args.coverage, args.smoothness, args.seed)
    m = simulate_mask(args.size, args.size, shape)
    ref, truth, changed = change_pair(
        m, args.bands, args.seed, kind=args.kind, spec=ChangeSpec(delta=args.delta)
    )
    save_raster(ref, out / "ref_t1")
    save_raster(truth, out / "truth_t0")
    config = {
        "target": "truth_t0",
        "reference": "ref_t1",
        "scale": args.scale,
        "seed": args.seed,
        "mask": {"coverage": args.coverage, "smoothness": args.smoothness},
        "lr_bias": {"gain": args.gain, "offset": 0.0},
        "methods": [method.value for method in MethodId],
        "out_dir": "results",
    }
    (out / "experiment.json").write_text(json.dumps(config, indent=2) + "\n")
    frac = float(changed[m.cells].mean()) if m.count else 0.0
    print(f"scene {args.size}x{args.size}x{args.bands} ({args.kind}); "
          f"changed share of cloud region {frac:.4f}")
    print(f"wrote {out / 'experiment.json'}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cloudfill", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate-mask", help="generate a smooth random cloud mask")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--coverage", type=float, default=0.25)
    p.add_argument("--smoothness", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--margin", type=int, default=1, help="cloud-free frame width in cells")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate_mask)

    p = sub.add_parser("degrade", help="block-mean downsample, then an optional per-band affine bias")
    p.add_argument("--input", required=True)
    p.add_argument("--scale", type=int, required=True)
    p.add_argument("--gain", type=_floats, default=(1.0,), help="one value or one per band")
    p.add_argument("--offset", type=_floats, default=(0.0,), help="one value or one per band")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("reconstruct", help="fill the masked cells of one image")
    p.add_argument("--method", required=True, choices=[m.value for m in MethodId])
    p.add_argument("--target", required=True, help="cloudy fine image")
    p.add_argument("--mask", required=True)
    p.add_argument("--ref", required=True, help="clear fine image at the reference date")
    p.add_argument("--ref-lr", help="coarse image at the reference date (proposed)")
    p.add_argument("--target-lr", help="coarse image at the target date (proposed)")
    p.add_argument("--scale", type=int, help="fine cells per coarse cell (proposed)")
    p.add_argument("--out", required=True)
    g = p.add_argument_group("poisson / proposed")
    g.add_argument("--tol", type=float)
    g.add_argument("--max-iters", type=int)
    g = p.add_argument_group("wlr")
    g.add_argument("--window", "--initial-window", dest="initial_window", type=int)
    g.add_argument("--max-window", type=int)
    g.add_argument("--min-samples", type=int)
    g.add_argument("--n-similar", type=int)
    g = p.add_argument_group("stmrf")
    g.add_argument("--patch-radius", type=int)
    g.add_argument("--search-stride", type=int)
    g.add_argument("--lambda", dest="lambda_smooth", type=float)
    g.add_argument("--icm-iters", type=int)
    g.add_argument("--candidates", dest="candidate_count", type=int)
    g = p.add_argument_group("proposed fusion step")
    g.add_argument("--fusion-window", type=int)
    g.add_argument("--n-classes", type=int)
    g.add_argument("--eps", type=float)
    g.add_argument("--resample", choices=["nearest", "bilinear"])
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="CC, NMSE and UIQI over the masked cells")
    p.add_argument("--original", required=True)
    p.add_argument("--recon", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--label", default="recon", help="column name in the printed table")
    p.add_argument("--per-band", action="store_true")
    p.add_argument("--json", help="also write the full-precision report here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="run a JSON experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--workers", type=int, default=1, help="methods run concurrently")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("export-pgm", help="8-bit PGM/PPM preview of a raster")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bands", help="one band index, or three comma-separated for PPM")
    p.set_defaults(func=cmd_export_pgm)

    p = sub.add_parser("synth-scene", help="write a synthetic change pair plus experiment config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--bands", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kind", choices=KINDS, default="patches")
    p.add_argument("--delta", type=float, default=ChangeSpec.delta)
    p.add_argument("--scale", type=int, default=8)
    p.add_argument("--coverage", type=float, default=0.25)
    p.add_argument("--smoothness", type=int, default=4)
    p.add_argument("--gain", type=float, default=1.0, help="coarse-sensor gain in the config")
    p.set_defaults(func=cmd_synth_scene)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.verbose:
        logging.getLogger(__name__).info("kernel backend: %s", kernels.BACKEND)
    try:
        return args.func(args)
    except (ConfigError, RasterFormatError, MetricError, MaskSimulationError,
            OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
