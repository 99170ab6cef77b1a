"""Time each reconstruction method on the compiled and the numpy backend.

Usage::

    python benchmarks/bench_kernels.py [--size 128] [--repeat 3]

Both backends are run on the same synthetic change scene; the script also
reports the largest output difference between them.
"""

import argparse
import time
import warnings

import numpy as np

from cloudfill import kernels
from cloudfill.cloud_sim import CloudShapeParams, apply_mask, simulate_mask
from cloudfill.pipeline import MethodId, reconstruct
from cloudfill.raster import SceneBundle, block_downsample
from cloudfill.scenes import change_pair


def scene(size, seed=0, scale=8):
    m = simulate_mask(size, size, CloudShapeParams(0.25, 4, seed))
    ref, truth, _ = change_pair(m, 3, seed)
    return SceneBundle(apply_mask(truth, m), m, ref, block_downsample(ref, scale),
                       block_downsample(truth, scale), scale)


def best_time(method, bundle, repeat):
    times, out = [], None
    for _ in range(repeat):
        start = time.perf_counter()
        out = reconstruct(method, bundle).output
        times.append(time.perf_counter() - start)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if kernels.compiled_backend is None:
        raise SystemExit("compiled kernels are not built; run pip install -e . first")

    warnings.simplefilter("ignore")
    bundle = scene(args.size)
    print(f"scene {args.size}x{args.size}x3, {bundle.mask.count} cloud cells, best of {args.repeat}")
    print(f"{'method':<10}{'cython s':>10}{'python s':>10}{'speedup':>9}{'max diff':>11}")
    for method in MethodId:
        with kernels.use_backend(kernels.compiled_backend):
            tc, oc = best_time(method, bundle, args.repeat)
        with kernels.use_backend(kernels.python_backend):
            tp, op = best_time(method, bundle, args.repeat)
        diff = float(np.abs(oc.values - op.values).max())
        print(f"{method.value:<10}{tc:>10.4f}{tp:>10.4f}{tp / tc:>8.1f}x{diff:>11.2e}")


if __name__ == "__main__":
    main()
