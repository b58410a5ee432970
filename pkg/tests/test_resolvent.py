import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from volterra.errors import GridError
from volterra.io import ArrayCache
from volterra.model import KernelSpec, Spectrum, laplacian_modes
from volterra.resolvent import (
    TimeGrid,
    build_resolvent_table,
    check_smoothing_bounds,
    resolvent_values,
    trapezoid_weights,
    volterra_residual,
)
from volterra.special_functions import MLParams, ml_eval

PI2 = math.pi**2


class TestTimeGrid:
    def test_endpoints(self):
        g = TimeGrid(1.0, 8)
        t = g.times()
        assert t[0] == 0.0 and t[-1] == 1.0 and g.dt == 0.125

    def test_subset_times_bit_identical(self):
        coarse, fine = TimeGrid(0.7, 48), TimeGrid(0.7, 48 * 7)
        r = coarse.ratio_to(fine)
        np.testing.assert_array_equal(coarse.times(), fine.times()[::r])

    def test_bad_grids(self):
        with pytest.raises(GridError):
            TimeGrid(1.0, 0)
        with pytest.raises(GridError):
            TimeGrid(1.0, 8).ratio_to(TimeGrid(1.0, 12))


class TestTable:
    def test_zero_mode(self):
        tab = build_resolvent_table(Spectrum((0.0,)), KernelSpec(1.5), TimeGrid(1.0, 8))
        np.testing.assert_array_equal(tab.s, 1.0)
        np.testing.assert_allclose(tab.w, 0.125, rtol=1e-15)

    def test_memoryless_reduction(self):
        tab = build_resolvent_table(Spectrum((2.0,)), KernelSpec.memoryless(), TimeGrid(0.5, 1))
        assert tab.s[0, 1] == pytest.approx(math.exp(-1), rel=1e-15)
        assert tab.w[0, 0] == pytest.approx((1 - math.exp(-1)) / 2, rel=1e-14)

    def test_initial_value_and_bound(self):
        for rho in (1.2, 1.5, 1.75):
            spec = laplacian_modes([1, 10, 30])
            tab = build_resolvent_table(spec, KernelSpec(rho), TimeGrid(1.0, 256))
            np.testing.assert_array_equal(tab.s[:, 0], 1.0)
            assert np.abs(tab.s).max() <= 1.05

    def test_telescoping(self):
        spec = laplacian_modes([2, 10])
        tab = build_resolvent_table(spec, KernelSpec(1.2), TimeGrid(1.0, 64))
        for k, lam in enumerate(spec.lambdas):
            total = 1.0 * ml_eval(MLParams(1.2, 2.0), -lam)
            assert tab.w[k].sum() == pytest.approx(total, rel=1e-12)

    @pytest.mark.parametrize("rho", [1.2, 1.5, 1.75])
    @pytest.mark.parametrize("lam", [PI2, 4 * PI2, 100 * PI2])
    def test_weights_vs_trapezoid(self, rho, lam):
        g = TimeGrid(1.0, 8)
        tab = build_resolvent_table(Spectrum((lam,)), KernelSpec(rho), g)
        ref = trapezoid_weights(rho, lam, g, tol=1e-10)
        np.testing.assert_allclose(tab.w[0], ref, rtol=1e-9)

    def test_deterministic(self):
        spec = laplacian_modes([3, 7])
        a = build_resolvent_table(spec, KernelSpec(1.35), TimeGrid(1.0, 100))
        b = build_resolvent_table(spec, KernelSpec(1.35), TimeGrid(1.0, 100))
        assert a.s.tobytes() == b.s.tobytes() and a.w.tobytes() == b.w.tobytes()

    def test_cache_roundtrip(self, tmp_path):
        cache = ArrayCache(tmp_path)
        spec = laplacian_modes([2])
        a = build_resolvent_table(spec, KernelSpec(1.5), TimeGrid(1.0, 32), cache=cache)
        assert len(list(tmp_path.iterdir())) == 2
        b = build_resolvent_table(spec, KernelSpec(1.5), TimeGrid(1.0, 32), cache=cache)
        np.testing.assert_array_equal(a.w, b.w)

    def test_refinement_halves_jumps(self):
        for rho in (1.2, 1.5, 1.75):
            jumps = []
            for M in (64, 128, 256):
                tab = build_resolvent_table(laplacian_modes([2]), KernelSpec(rho), TimeGrid(1.0, M))
                jumps.append(np.abs(np.diff(tab.s[0])).max())
            ratios = np.array(jumps[:-1]) / np.array(jumps[1:])
            assert np.all(ratios > 1.5)


class TestResidual:
    @pytest.mark.parametrize("rho", [1.2, 1.5, 1.75])
    @pytest.mark.parametrize("lam", [PI2, 4 * PI2])
    def test_residual_small(self, rho, lam):
        t = np.linspace(0.0, 1.0, 4096)
        assert volterra_residual(KernelSpec(rho), lam, resolvent_values(rho, lam, t)) <= 1e-3

    def test_near_two(self):
        t = np.linspace(0.0, 1.0, 4096)
        assert volterra_residual(KernelSpec(1.999), PI2, resolvent_values(1.999, PI2, t)) <= 1e-3

    def test_zero_lambda(self):
        assert volterra_residual(KernelSpec(1.5), 0.0, np.ones(1024)) == 0.0

    def test_detects_wrong_function(self):
        t = np.linspace(0.0, 1.0, 4096)
        wrong = resolvent_values(1.5, PI2, t)  # solves the rho = 1.5 equation
        assert volterra_residual(KernelSpec(1.2), PI2, wrong) > 1e-2

    def test_coarse_grid(self):
        with pytest.raises(GridError):
            volterra_residual(KernelSpec(1.5), PI2, np.ones(100))

    def test_second_order_away_from_origin(self):
        rho, lam = 1.5, 4 * PI2
        r = []
        for n in (1025, 2049, 4097):
            t = np.linspace(0.0, 1.0, n)
            r.append(volterra_residual(KernelSpec(rho), lam, resolvent_values(rho, lam, t)))
        assert r[0] > r[1] > r[2]


class TestSmoothing:
    @pytest.mark.parametrize("rho", [1.2, 1.5, 1.75])
    def test_sweep(self, rho):
        spec = laplacian_modes([1, 10, 30])
        tab = build_resolvent_table(spec, KernelSpec(rho), TimeGrid(1.0, 256))
        rep = check_smoothing_bounds(tab, KernelSpec(rho))
        assert rep.constants[("S1", 0.0)] <= 1.05
        assert all(np.isfinite(v) for v in rep.constants.values())
        # lambda^(1/rho) |s'| t^2 peaks near 12 for rho = 1.75 (slowly damped
        # oscillation of E_{rho,rho}); the default ceiling 10 only covers rho <= 1.5
        assert rep.passed == (rho <= 1.5)
        assert check_smoothing_bounds(tab, KernelSpec(rho), ceiling=20.0).passed

    def test_zero_row(self):
        tab = build_resolvent_table(Spectrum((0.0,)), KernelSpec(1.5), TimeGrid(1.0, 16))
        rep = check_smoothing_bounds(tab, KernelSpec(1.5))
        for (bound, s), v in rep.constants.items():
            if s > 0:
                assert v == 0.0

    def test_refinement_stable(self):
        rho = 1.75
        vals = []
        for M in (256, 512):
            tab = build_resolvent_table(laplacian_modes([10]), KernelSpec(rho), TimeGrid(1.0, M))
            vals.append(check_smoothing_bounds(tab, KernelSpec(rho)).constants[("S1", 1 / rho)])
        assert 0.5 <= vals[0] / vals[1] <= 2.0
        assert np.isfinite(vals).all()


@settings(max_examples=25, deadline=None)
@given(rho=st.floats(1.05, 1.95), lam=st.floats(0.0, 1e4), M=st.integers(2, 64))
def test_table_invariants(rho, lam, M):
    tab = build_resolvent_table(Spectrum((lam,)), KernelSpec(rho), TimeGrid(1.0, M))
    assert tab.s[0, 0] == 1.0
    assert np.abs(tab.s).max() <= 1.05
    total = ml_eval(MLParams(rho, 2.0), -lam)
    assert tab.w[0].sum() == pytest.approx(total, rel=1e-10, abs=1e-14)
