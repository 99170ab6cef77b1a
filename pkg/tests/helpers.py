"""Small scene builders shared by the tests."""

import numpy as np

from cloudfill.cloud_sim import CloudShapeParams, apply_mask, simulate_mask
from cloudfill.raster import Mask, Raster, SceneBundle, block_downsample


def random_raster(rng, bands, h, w, lo=0.0, hi=1.0):
    return Raster(rng.uniform(lo, hi, size=(bands, h, w)))


def interior_mask(rng, h, w, n):
    """``n`` distinct random cells, never on the image border."""
    cells = np.zeros((h, w), dtype=bool)
    inner = [(i, j) for i in range(1, h - 1) for j in range(1, w - 1)]
    for k in rng.choice(len(inner), size=n, replace=False):
        cells[inner[k]] = True
    return Mask(cells)


def box_mask(h, w, r0, r1, c0, c1):
    cells = np.zeros((h, w), dtype=bool)
    cells[r0:r1, c0:c1] = True
    return Mask(cells)


def smooth_scene(seed, size=32, bands=2, coverage=0.2, scale=4):
    """Bundle over a smooth random landscape with a simulated cloud mask."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    base = []
    for b in range(bands):
        a, c, p = rng.uniform(0.5, 2.0, 3)
        base.append(0.3 + 0.1 * np.sin(a * 6 * xx + p) * np.cos(c * 5 * yy) + 0.05 * b)
    ref = Raster(np.array(base) + rng.normal(0, 0.01, (bands, size, size)))
    truth = Raster(ref.values * 1.1 + 0.02 + rng.normal(0, 0.005, (bands, size, size)))
    m = simulate_mask(size, size, CloudShapeParams(coverage, 3, seed))
    return SceneBundle(
        apply_mask(truth, m),
        m,
        ref,
        block_downsample(ref, scale),
        block_downsample(truth, scale),
        scale,
    ), truth


def write_change_scene(out_dir, seed, kind="patches", size=64, bands=3, coverage=0.25, smoothness=4):
    """Save a reference/truth change pair under ``out_dir``; return the mask shape params."""
    from cloudfill.raster import save_raster
    from cloudfill.scenes import change_pair

    shape = CloudShapeParams(coverage, smoothness, seed)
    m = simulate_mask(size, size, shape)
    ref, truth, changed = change_pair(m, bands, seed, kind=kind)
    save_raster(ref, out_dir / "ref_t1")
    save_raster(truth, out_dir / "truth_t0")
    return shape


def experiment_doc(seed, methods, coverage=0.25, smoothness=4, gain=1.0, out_dir="results"):
    return {
        "target": "truth_t0",
        "reference": "ref_t1",
        "scale": 8,
        "seed": seed,
        "mask": {"coverage": coverage, "smoothness": smoothness},
        "lr_bias": {"gain": gain, "offset": 0.0},
        "methods": methods,
        "out_dir": out_dir,
    }
