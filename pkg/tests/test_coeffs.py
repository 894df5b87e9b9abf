"""Coefficient solvers: history grid, closed ODE, Markov limit, thermal."""

import numpy as np
import pytest

from cradle.coeffs import (
    CoefficientTable,
    MemoryCapError,
    SolverBlowupError,
    effective_coupling_ratio,
    markov_coefficients,
    solve_F_ou_fast,
    solve_f_history,
    solve_thermal_coeffs,
)
from cradle.fock import SystemSpec
from cradle.kernels import (LorentzSpec, QuadratureConfig, markovian_kernel,
                            ou_kernel, thermal_kernels)

FIG2 = dict(gamma_big=1.0, gamma=0.1, delta=10.0)


def two_cavity():
    return SystemSpec.uniform(2, omega=1.0)


class TestHistorySolver:
    def test_initial_coefficients_vanish(self):
        table = solve_f_history(two_cavity(), ou_kernel(LorentzSpec(**FIG2)),
                                0.01, 0.5)
        assert np.abs(table.F[0]).max() == 0.0

    def test_symmetric_pair_identical(self):
        table = solve_f_history(two_cavity(), ou_kernel(LorentzSpec(**FIG2)),
                                0.002, 2.0)
        assert np.abs(table.F[:, 0] - table.F[:, 1]).max() <= 1e-10

    def test_history_columns_start_at_weights(self):
        spec = SystemSpec.uniform(3, weights=(1.0, 0.5, 1.5))
        _, hist = solve_f_history(spec, ou_kernel(LorentzSpec(1.0, 0.5, 2.0)),
                                  0.01, 0.3, return_history=True)
        np.testing.assert_allclose(hist.columns[:, -1], [1.0, 0.5, 1.5])

    def test_markov_consistency_of_history_grid(self):
        # very short memory: the tail must sit within 2% of Gamma/2
        spec = two_cavity()
        kernel = ou_kernel(LorentzSpec(1.0, 1000.0, 0.0))
        table = solve_f_history(spec, kernel, 2e-5, 0.02)
        tail = effective_coupling_ratio(table)
        assert np.abs(tail.re - 0.5).max() <= 0.01
        assert np.abs(tail.im).max() <= 1e-3

    def test_delta_kernel_rejected(self):
        with pytest.raises(ValueError):
            solve_f_history(two_cavity(), markovian_kernel(1.0), 0.01, 1.0)

    def test_blowup_guard(self):
        spec = two_cavity()
        kernel = ou_kernel(LorentzSpec(1e9, 1.0, 0.0))
        with pytest.raises(SolverBlowupError):
            solve_f_history(spec, kernel, 0.05, 10.0)


class TestCrossSolver:
    def test_agreement_and_order(self):
        spec = two_cavity()
        lor = LorentzSpec(**FIG2)
        kernel = ou_kernel(lor)
        t_max, dt = 1.5, 5e-4
        ref_coarse = solve_F_ou_fast(spec, lor, dt, t_max)
        hist_coarse = solve_f_history(spec, kernel, dt, t_max)
        ref_fine = solve_F_ou_fast(spec, lor, dt / 2, t_max)
        hist_fine = solve_f_history(spec, kernel, dt / 2, t_max)
        scale = np.abs(ref_fine.F).max()
        err_coarse = np.abs(hist_coarse.F - ref_coarse.F).max() / scale
        err_fine = np.abs(hist_fine.F - ref_fine.F).max() / scale
        assert err_fine <= 1e-6
        # halving dt cuts the disagreement about fourfold (second order)
        assert 3.0 <= err_coarse / err_fine <= 5.5

    def test_order_against_quarter_step_reference(self):
        spec = two_cavity()
        lor = LorentzSpec(1.0, 0.5, 4.0)
        t_max = 1.0
        ref = solve_f_history(spec, ou_kernel(lor), 2.5e-4, t_max)
        coarse = solve_f_history(spec, ou_kernel(lor), 2e-3, t_max)
        half = solve_f_history(spec, ou_kernel(lor), 1e-3, t_max)
        e_coarse = np.abs(coarse.F - ref.F[::8]).max()
        e_half = np.abs(half.F - ref.F[::4]).max()
        assert 3.0 <= e_coarse / e_half <= 5.5


class TestFastPath:
    def test_initial_condition(self):
        table = solve_F_ou_fast(two_cavity(), LorentzSpec(**FIG2), 0.01, 1.0)
        assert np.abs(table.F[0]).max() == 0.0

    def test_short_memory_limit(self):
        lor = LorentzSpec(1.0, 100.0, 0.0)
        table = solve_F_ou_fast(two_cavity(), lor, 1e-4, 1.0)
        tail = effective_coupling_ratio(table)
        assert np.abs(tail.re + 1j * tail.im - 0.5).max() <= 2.0 / lor.gamma

    def test_single_mode_steady_state_root(self):
        spec = SystemSpec.uniform(1, omega=1.0)
        lor = LorentzSpec(1.0, 0.5, 3.0)
        table = solve_F_ou_fast(spec, lor, 0.002, 60.0)
        f_inf = table.F[-1, 0]
        # stationary point of the closed ODE
        residual = f_inf**2 + (1j * 1.0 - lor.gamma - 1j * lor.delta) * f_inf \
            + lor.gamma_big * lor.gamma / 2.0
        assert abs(residual) <= 1e-8

    def test_blowup_guard(self):
        with pytest.raises(SolverBlowupError):
            solve_F_ou_fast(two_cavity(), LorentzSpec(1e10, 1.0, 0.0),
                            0.05, 50.0)

    def test_permutation_symmetry_three_modes(self):
        spec = SystemSpec.uniform(3, omega=1.0)
        table = solve_F_ou_fast(spec, LorentzSpec(1.0, 0.4, 2.0), 0.002, 5.0)
        assert np.abs(table.F - table.F[:, [1, 2, 0]]).max() <= 1e-10


class TestMarkovTable:
    def test_constant_half_gamma(self):
        table = markov_coefficients(two_cavity(), 1.0, 0.01, 1.0)
        assert np.all(table.F == 0.5)
        assert np.all(table.F.imag == 0.0)
        assert table.provenance == "markov-analytic"

    def test_independent_of_frequencies_and_couplings(self):
        a = markov_coefficients(SystemSpec.uniform(2, omega=1.0), 2.0, 0.01, 1.0)
        b = markov_coefficients(SystemSpec.uniform(2, omega=7.0, lam=3.0),
                                2.0, 0.01, 1.0)
        np.testing.assert_array_equal(a.F, b.F)

    def test_weights_are_absorbed(self):
        # the table carries the collective-operator weights, so the
        # propagators can use it without re-weighting
        spec = SystemSpec.uniform(3, weights=(1.0, 0.5, 1.5))
        table = markov_coefficients(spec, 2.0, 0.01, 0.1)
        np.testing.assert_allclose(table.F[0], [1.0, 0.5, 1.5])


class TestTailEstimate:
    def test_markov_ratio_zero(self):
        table = markov_coefficients(two_cavity(), 1.0, 0.01, 1.0)
        tail = effective_coupling_ratio(table)
        assert np.all(tail.ratio == 0.0)
        assert tail.stationary

    def test_ratio_grows_with_central_frequency(self):
        ratios = []
        for delta in (2.0, 4.0, 6.0, 8.0):
            lor = LorentzSpec(1.0, 0.5, delta)
            table = solve_F_ou_fast(two_cavity(), lor, 0.005, 80.0)
            ratios.append(effective_coupling_ratio(table).ratio[0])
        assert all(b > a for a, b in zip(ratios, ratios[1:]))

    def test_tail_matches_stable_quadratic_root(self):
        spec = SystemSpec.uniform(1, omega=1.0)
        lor = LorentzSpec(1.0, 0.5, 3.0)
        table = solve_F_ou_fast(spec, lor, 0.002, 80.0)
        tail = effective_coupling_ratio(table, window=0.1)
        lin = 1j * 1.0 - lor.gamma - 1j * lor.delta
        roots = np.roots([1.0, lin, lor.gamma_big * lor.gamma / 2.0])
        stable = [r for r in roots if (2 * r + lin).real < 0.0]
        assert len(stable) == 1
        est = tail.re[0] + 1j * tail.im[0]
        assert abs(est - stable[0]) <= 1e-8
        assert tail.stationary

    def test_nonstationary_tail_flagged(self):
        lor = LorentzSpec(1.0, 0.1, 10.0)
        table = solve_F_ou_fast(two_cavity(), lor, 0.002, 2.0)
        tail = effective_coupling_ratio(table)
        assert not tail.stationary


class TestSingleParticleOracle:
    """The exact amplitude dynamics obeys the memory (Volterra) equation

        d<a_i>/dt = -i Omega_i <a_i> - i (lambda hops)
                    - l_i int_0^t K(t - s) sum_k l_k <a_k(s)> ds,

    integrated here by an independent Heun + trapezoid scheme.  The
    table-driven local drift

        d<a_i>/dt = -i Omega_i <a_i> - i (lambda hops) - l_i sum_k F_k(t) <a_k>

    must reproduce it: this pins the coefficient convention (weights
    included) against first principles.
    """

    @staticmethod
    def volterra_amplitudes(spec, kernel, dt, t_max):
        om = np.asarray(spec.omegas)
        lam = np.asarray(spec.lambdas)
        wts = np.asarray(spec.weights)
        steps = int(round(t_max / dt))
        n = spec.num_cavities
        ku = kernel(np.arange(steps + 1) * dt)
        a = np.zeros((steps + 1, n), complex)
        a[0, 0] = 1.0

        def mem(hist, m):
            if m == 0:
                return 0.0
            w = np.ones(m + 1)
            w[0] = w[-1] = 0.5
            coll = hist[: m + 1] @ wts
            return (w * ku[m::-1] * coll).sum() * dt

        def drift(vec, integral):
            d = -1j * om * vec - wts * integral
            d[:-1] += -1j * lam[:-1] * vec[1:]
            d[1:] += -1j * lam[:-1] * vec[:-1]
            return d

        for m in range(steps):
            d1 = drift(a[m], mem(a, m))
            a[m + 1] = a[m] + dt * d1
            d2 = drift(a[m + 1], mem(a, m + 1))
            a[m + 1] = a[m] + dt / 2 * (d1 + d2)
        return a

    @staticmethod
    def table_amplitudes(spec, table, dt, t_max):
        om = np.asarray(spec.omegas)
        lam = np.asarray(spec.lambdas)
        wts = np.asarray(spec.weights)
        steps = int(round(t_max / dt))
        a = np.zeros((steps + 1, spec.num_cavities), complex)
        a[0, 0] = 1.0
        tgrid = np.arange(steps + 1) * dt

        def drift(vec, F):
            d = -1j * om * vec - wts * (F @ vec)
            d[:-1] += -1j * lam[:-1] * vec[1:]
            d[1:] += -1j * lam[:-1] * vec[:-1]
            return d

        f_lo = table.at(tgrid[:-1])
        f_hi = table.at(tgrid[1:])
        for m in range(steps):
            d1 = drift(a[m], f_lo[m])
            pred = a[m] + dt * d1
            d2 = drift(pred, f_hi[m])
            a[m + 1] = a[m] + dt / 2 * (d1 + d2)
        return a

    @pytest.mark.parametrize("weights,lam", [
        ((1.0, 1.0, 1.0), 0.0),
        ((1.0, 0.5, 1.5), 0.0),
        ((1.0, 1.0, 1.0), 0.8),
        ((1.0, 0.7, 1.2), 0.6),
    ])
    def test_table_drift_matches_memory_equation(self, weights, lam):
        spec = SystemSpec.uniform(3, omega=1.0, lam=lam, weights=weights)
        lor = LorentzSpec(1.0, 0.5, 2.0)
        dt, t_max = 1e-3, 4.0
        table = solve_F_ou_fast(spec, lor, dt, t_max)
        direct = self.volterra_amplitudes(spec, ou_kernel(lor), dt, t_max)
        local = self.table_amplitudes(spec, table, dt, t_max)
        assert np.abs(direct - local).max() <= 5e-5


class TestThermalSolver:
    def setup_pair(self, dt=0.02, t_max=1.0, beta=1e3):
        spec = SystemSpec.uniform(2, omega=1.0)
        steps = int(round(t_max / dt))
        u = np.arange(steps + 1) * dt
        lor = LorentzSpec(1.0, 0.5, 8.0)
        pair = thermal_kernels(lor, beta=beta, u_grid=u)
        return spec, pair, dt, t_max

    def test_zero_temperature_reduction(self):
        spec, pair, dt, t_max = self.setup_pair()
        grids = solve_thermal_coeffs(spec, pair, dt, t_max, step_cap=60)
        table, hist = solve_f_history(spec, pair.k1_kernel(), dt, t_max,
                                      return_history=True)
        n = grids.x.shape[0] - 1
        assert np.abs(grids.x[n].T - hist.columns).max() <= 1e-8
        assert np.abs(grids.Y).max() <= 1e-8
        assert np.abs(grids.Yp).max() <= 1e-8

    def test_boundary_rows_exact(self):
        spec, pair, dt, t_max = self.setup_pair(t_max=0.4)
        grids = solve_thermal_coeffs(spec, pair, dt, t_max, step_cap=60)
        wts = np.asarray(spec.weights)
        for n in (5, 12, 20):
            np.testing.assert_array_equal(grids.x[n, n], wts)
            np.testing.assert_array_equal(grids.y[n, n], wts)
            assert np.abs(grids.xp[n, n, : n + 1]).max() == 0.0
            assert np.abs(grids.yp[n, n, : n + 1]).max() == 0.0
            # fresh s' boundary, away from the (t, t) corner
            res_x = grids.xp[n, :n, n] + grids.x[n, :n] @ wts
            res_y = grids.yp[n, :n, n] - grids.y[n, :n] @ wts
            assert np.abs(res_x).max() == 0.0
            assert np.abs(res_y).max() == 0.0

    def test_memory_cap(self):
        spec, pair, dt, _ = self.setup_pair(t_max=1.0)
        with pytest.raises(MemoryCapError, match="MB"):
            solve_thermal_coeffs(spec, pair, dt, 1.0, step_cap=10)


class TestTableUtilities:
    def test_interpolation(self):
        F = np.array([[0.0], [1.0], [2.0]], dtype=complex)
        table = CoefficientTable(dt=0.5, F=F, provenance="test")
        assert table.at(0.25)[0] == pytest.approx(0.5)
        np.testing.assert_allclose(table.at([0.0, 0.5, 1.0]).ravel(),
                                   [0.0, 1.0, 2.0])
        # clamped beyond the grid
        assert table.at(9.9)[0] == pytest.approx(2.0)

    def test_times_and_span(self):
        table = markov_coefficients(two_cavity(), 1.0, 0.1, 1.0)
        assert table.t_max == pytest.approx(1.0)
        assert len(table.times) == 11
