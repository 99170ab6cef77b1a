import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from helpers import box_mask, interior_mask, random_raster
from cloudfill.poisson import (
    BorderCellsWarning,
    ConvergenceError,
    EmptyRegionError,
    GuidanceField,
    PoissonError,
    SolverOptions,
    gradient_field,
    interior_region,
    poisson_adjust,
    poisson_replace,
    poisson_solve,
)
from cloudfill.raster import Mask, Raster


def zero_field(shape):
    return GuidanceField(np.zeros(shape), np.zeros(shape))


def rms(a, b, cells):
    return float(np.sqrt(np.mean((a[:, cells] - b[:, cells]) ** 2)))


class TestGradientField:
    def test_constant(self):
        g = gradient_field(Raster(np.full((2, 4, 5), 3.0)))
        assert not g.gx.any() and not g.gy.any()

    def test_ramp(self):
        ramp = np.tile(np.arange(6.0), (4, 1))
        g = gradient_field(Raster(ramp))
        np.testing.assert_array_equal(g.gx[0, :, :-1], 1.0)
        np.testing.assert_array_equal(g.gx[0, :, -1], 0.0)
        assert not g.gy.any()

    def test_against_loops(self, rng):
        v = rng.random((2, 4, 4))
        g = gradient_field(Raster(v))
        gx, gy = oracles.gradient_loops(v)
        np.testing.assert_array_equal(g.gx, gx)
        np.testing.assert_array_equal(g.gy, gy)

    def test_divergence_of_gradient_is_laplacian(self, rng):
        v = rng.random((1, 7, 8))
        div = gradient_field(Raster(v)).divergence()[0]
        lap = v[0, :-2, 1:-1] + v[0, 2:, 1:-1] + v[0, 1:-1, :-2] + v[0, 1:-1, 2:] - 4 * v[0, 1:-1, 1:-1]
        np.testing.assert_allclose(div[1:-1, 1:-1], lap, atol=1e-14)

    def test_field_validation(self):
        with pytest.raises(ValueError):
            GuidanceField(np.zeros((1, 2, 2)), np.zeros((1, 2, 3)))
        with pytest.raises(ValueError):
            GuidanceField(np.full((1, 2, 2), np.nan), np.zeros((1, 2, 2)))


class TestSolverOptions:
    def test_defaults(self):
        o = SolverOptions()
        assert o.tol == 1e-8
        assert o.iteration_cap(50) == 500
        assert o.iteration_cap(10**6) == 100_000
        assert SolverOptions(max_iters=7).iteration_cap(50) == 7

    @pytest.mark.parametrize("kw", [{"tol": 0}, {"tol": -1}, {"max_iters": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SolverOptions(**kw)


@pytest.mark.usefixtures("backend")
class TestPoissonSolve:
    def test_single_cell(self):
        v = np.zeros((1, 3, 3))
        v[0, 0, 1], v[0, 2, 1], v[0, 1, 0], v[0, 1, 2] = 1, 2, 3, 4
        out = poisson_solve(Raster(v), box_mask(3, 3, 1, 2, 1, 2), zero_field(v.shape))
        assert out.values[0, 1, 1] == pytest.approx(2.5, abs=1e-12)

    def test_harmonic_constant(self, rng):
        c = 0.37
        src = np.full((2, 12, 12), c)
        m = Mask(rng.random((12, 12)) < 0.5)
        m = Mask(interior_region(m)[0])
        out = poisson_solve(Raster(src), m, zero_field(src.shape))
        np.testing.assert_allclose(out.values, c, atol=1e-8)

    def test_self_consistency(self, rng):
        w = random_raster(rng, 2, 20, 20)
        m = box_mask(20, 20, 4, 15, 3, 17)
        out = poisson_solve(w, m, gradient_field(w))
        assert rms(out.values, w.values, m.cells) <= 1e-4
        # in practice far tighter than the contract
        assert rms(out.values, w.values, m.cells) <= 1e-8

    @pytest.mark.parametrize("seed", range(8))
    def test_dense_oracle(self, seed):
        rng = np.random.default_rng(seed)
        src = random_raster(rng, 2, 16, 16)
        m = interior_mask(rng, 16, 16, int(rng.integers(1, 13)))
        g = GuidanceField(rng.normal(0, 0.1, (2, 16, 16)), rng.normal(0, 0.1, (2, 16, 16)))
        out = poisson_solve(src, m, g)
        ref = oracles.dense_poisson(src.values, m.cells, g.gx, g.gy)
        np.testing.assert_allclose(out.values, ref, rtol=0, atol=1e-9)

    def test_disconnected_components_match_joint_dense_solve(self, rng):
        src = random_raster(rng, 1, 14, 14)
        cells = np.zeros((14, 14), bool)
        cells[2:5, 2:5] = True
        cells[8:12, 6:11] = True
        m = Mask(cells)
        g = gradient_field(random_raster(rng, 1, 14, 14))
        out, info = poisson_solve(src, m, g, full_output=True)
        assert info.n_components == 2
        ref = oracles.dense_poisson(src.values, cells, g.gx, g.gy)
        np.testing.assert_allclose(out.values, ref, atol=1e-9)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_maximum_principle(self, seed):
        rng = np.random.default_rng(seed)
        src = random_raster(rng, 1, 12, 12)
        m = Mask(interior_region(Mask(rng.random((12, 12)) < 0.6))[0])
        if not m.count:
            return
        out = poisson_solve(src, m, zero_field(src.values.shape))
        ring = m.boundary()
        lo, hi = src.values[0][ring].min(), src.values[0][ring].max()
        inside = out.values[0][m.cells]
        tol = 10 * SolverOptions().tol
        assert inside.min() >= lo - tol and inside.max() <= hi + tol

    def test_pass_through_and_residual(self, rng):
        src = random_raster(rng, 3, 24, 24)
        m = box_mask(24, 24, 5, 19, 6, 18)
        out, info = poisson_solve(src, m, gradient_field(random_raster(rng, 3, 24, 24)), full_output=True)
        outside = ~m.cells
        assert np.array_equal(out.values[:, outside], src.values[:, outside])
        assert len(info.residuals) == 3
        assert all(r <= 1e-8 for r in info.residuals)
        assert info.n_unknowns == m.count

    def test_deterministic(self, rng):
        src = random_raster(rng, 1, 30, 30)
        m = box_mask(30, 30, 3, 27, 4, 25)
        g = gradient_field(random_raster(rng, 1, 30, 30))
        a = poisson_solve(src, m, g).values
        b = poisson_solve(src, m, g).values
        assert a.tobytes() == b.tobytes()

    def test_border_cells_dropped_with_warning(self, rng):
        src = random_raster(rng, 1, 8, 8)
        m = box_mask(8, 8, 0, 4, 0, 4)
        with pytest.warns(BorderCellsWarning, match="7 mask cell"):
            out, info = poisson_solve(src, m, zero_field(src.values.shape), full_output=True)
        assert info.border_cells_removed == 7
        # border cells keep the boundary source value
        np.testing.assert_array_equal(out.values[0, 0, :4], src.values[0, 0, :4])
        np.testing.assert_array_equal(out.values[0, :4, 0], src.values[0, :4, 0])

    def test_border_only_mask_is_empty_region(self):
        src = Raster(np.zeros((1, 6, 6)))
        with pytest.warns(BorderCellsWarning):
            with pytest.raises(EmptyRegionError):
                poisson_solve(src, box_mask(6, 6, 0, 1, 0, 6), zero_field((1, 6, 6)))

    def test_empty_mask(self):
        with pytest.raises(EmptyRegionError):
            poisson_solve(Raster(np.zeros((1, 6, 6))), Mask.empty(6, 6), zero_field((1, 6, 6)))

    def test_non_convergence_reports_residual(self, rng):
        src = random_raster(rng, 1, 40, 40)
        m = box_mask(40, 40, 2, 38, 2, 38)
        g = gradient_field(random_raster(rng, 1, 40, 40))
        with pytest.raises(ConvergenceError) as info:
            poisson_solve(src, m, g, SolverOptions(max_iters=3))
        assert info.value.residual > 1e-8
        assert "relative residual" in str(info.value)

    def test_shape_errors(self):
        with pytest.raises(PoissonError):
            poisson_solve(Raster(np.zeros((1, 6, 6))), Mask.empty(5, 6), zero_field((1, 6, 6)))
        with pytest.raises(PoissonError):
            poisson_solve(Raster(np.zeros((1, 6, 6))), box_mask(6, 6, 2, 3, 2, 3), zero_field((2, 6, 6)))


@pytest.mark.usefixtures("backend")
class TestReplaceAndAdjust:
    def test_reference_equals_target(self, rng):
        t = random_raster(rng, 2, 16, 16)
        m = box_mask(16, 16, 3, 12, 4, 13)
        out = poisson_replace(t, m, t)
        assert rms(out.values, t.values, m.cells) <= 1e-8

    @pytest.mark.parametrize("c", [0.3, -1.5])
    def test_offset_removed(self, rng, c):
        t = random_raster(rng, 2, 16, 16)
        m = box_mask(16, 16, 3, 12, 4, 13)
        out = poisson_replace(t, m, Raster(t.values + c))
        assert rms(out.values, t.values, m.cells) <= 1e-4

    def test_offset_invariance(self, rng):
        t = random_raster(rng, 2, 20, 20)
        ref = random_raster(rng, 2, 20, 20)
        m = box_mask(20, 20, 2, 17, 5, 16)
        a = poisson_replace(t, m, ref).values
        b = poisson_replace(t, m, Raster(ref.values + 0.3)).values
        assert rms(a, b, m.cells) < 10 * SolverOptions().tol

    def test_adjust_is_seamless(self, rng):
        t = random_raster(rng, 1, 16, 16)
        prediction = Raster(t.values + 0.5 + rng.normal(0, 0.05, t.values.shape))
        m = box_mask(16, 16, 4, 12, 4, 12)
        out = poisson_adjust(t, m, prediction)
        ring = m.boundary()
        assert np.abs(out.values[:, ring] - t.values[:, ring]).max() == 0.0
        # the constant offset of the prediction is gone inside the region
        assert abs(out.values[:, m.cells].mean() - t.values[:, m.cells].mean()) < 0.05

    def test_adjust_equals_replace(self, rng):
        t = random_raster(rng, 1, 12, 12)
        p = random_raster(rng, 1, 12, 12)
        m = box_mask(12, 12, 3, 9, 3, 9)
        assert poisson_adjust(t, m, p) == poisson_replace(t, m, p)

    def test_target_fill_values_ignored(self, rng):
        t = random_raster(rng, 1, 12, 12)
        ref = random_raster(rng, 1, 12, 12)
        m = box_mask(12, 12, 3, 9, 3, 9)
        clouded = np.where(m.cells, 1.0, t.values)
        a = poisson_replace(t, m, ref)
        b = poisson_replace(Raster(clouded), m, ref)
        assert a == b

    def test_band_mismatch(self, rng):
        with pytest.raises(PoissonError):
            poisson_replace(random_raster(rng, 2, 8, 8), box_mask(8, 8, 2, 4, 2, 4), random_raster(rng, 1, 8, 8))
