"""Acceptance suite.

Every criterion runs at its stated tolerance and reports one pass/fail line
(collected into the terminal summary by conftest).  The heavy propagations
are shared through module-scoped fixtures; expect tens of minutes in total
on one core.
"""

import math
import warnings

import numpy as np
import pytest
import scipy.signal

from conftest import record_criterion
from cradle.coeffs import (effective_coupling_ratio, markov_coefficients,
                           solve_F_ou_fast, solve_f_history,
                           solve_thermal_coeffs)
from cradle.dynamics import run_ensemble, run_master, trace_distance
from cradle.fock import (DensOp, FockSpace, SystemSpec, cat_state,
                         partial_trace)
from cradle.kernels import LorentzSpec, ou_kernel, thermal_kernels
from cradle.observables import negativity_volume, transfer_fidelity, \
    wigner_grid

warnings.filterwarnings("ignore", message="cutoff")

SPEC2 = SystemSpec.uniform(2, omega=1.0)
SPACE2 = FockSpace(2, 20)
LOR_FIG2 = LorentzSpec(gamma_big=1.0, gamma=0.1, delta=10.0)
ALPHA = 2.0
SINGLE20 = FockSpace(1, 20)


def fidelity_of_reduced(reduced_mats, alpha, cutoff):
    space = FockSpace(1, cutoff)
    out = np.empty(len(reduced_mats))
    for k, mat in enumerate(reduced_mats):
        out[k], _ = transfer_fidelity(DensOp(space, mat), alpha)
    return out


def jackknife_norm_stat(total, blocks, sizes, stat):
    """(value, bias, se) of a statistic of a blockwise-accumulated mean."""
    m = sum(sizes)
    value = stat(total / m)
    loo = np.array([stat((total - b) / (m - s))
                    for b, s in zip(blocks, sizes)])
    g = len(loo)
    se = math.sqrt((g - 1) / g * np.sum((loo - loo.mean()) ** 2))
    bias = (g - 1) * (loo.mean() - value)
    return value, bias, se


# ---------------------------------------------------------------------------
# shared heavy runs
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def fig2_run():
    """Criterion-1 setup: master propagation over the full transfer window."""
    dt, t_max = 0.02, 300.0
    table = solve_F_ou_fast(SPEC2, LOR_FIG2, dt / 2.0, t_max)
    probes = [round(k * 0.5, 10) for k in range(int(t_max / 0.5) + 1)]
    reduced = []

    def on_probe(t, rho):
        reduced.append(partial_trace(DensOp(SPACE2, rho), 2).mat)

    run = run_master(SPEC2, SPACE2, table, dt, t_max, probes, alpha=ALPHA,
                     store_states=False, on_probe=on_probe)
    fid = fidelity_of_reduced(reduced, ALPHA, 20)
    return {"times": np.asarray(probes), "fidelity": fid, "reduced": reduced,
            "run": run}


@pytest.fixture(scope="module")
def markov_side_run():
    """Criterion-2 comparison branch: same setup, short-memory environment."""
    lor = LorentzSpec(gamma_big=1.0, gamma=20.0, delta=10.0)
    dt, t_max = 0.005, 15.0
    table = solve_F_ou_fast(SPEC2, lor, dt / 2.0, t_max)
    probes = [round(k * 0.25, 10) for k in range(int(t_max / 0.25) + 1)]
    reduced = []

    def on_probe(t, rho):
        reduced.append(partial_trace(DensOp(SPACE2, rho), 2).mat)

    run = run_master(SPEC2, SPACE2, table, dt, t_max, probes, alpha=ALPHA,
                     store_states=False, on_probe=on_probe)
    fid = fidelity_of_reduced(reduced, ALPHA, 20)
    return {"times": np.asarray(probes), "fidelity": fid, "reduced": reduced,
            "run": run}


@pytest.fixture(scope="module")
def equivalence_runs():
    """Criterion-5 setup: ensemble versus master on the same grid.

    dt is chosen so the left-endpoint noise-freezing bias (weak first order)
    sits below the M = 2000 statistical floor at every probe.
    """
    dt, t_max = 0.0025, 12.0
    probes = [2.0, 4.0, 8.0, 12.0]
    table = solve_F_ou_fast(SPEC2, LOR_FIG2, dt / 2.0, t_max)
    master = run_master(SPEC2, SPACE2, table, dt, t_max, probes, alpha=ALPHA,
                        check_eigenvalues=False)
    ens = run_ensemble(SPEC2, SPACE2, table, ou_kernel(LOR_FIG2), dt, t_max,
                       probes, 2000, seed=20, alpha=ALPHA, batch_size=100)
    return {"probes": probes, "master": master, "ensemble": ens}


@pytest.fixture(scope="module")
def eta_routing_runs():
    """Criterion-6 setup: asymmetric weights and the symmetric control."""
    space = FockSpace(3, 14)
    lor = LorentzSpec(gamma_big=1.0, gamma=0.1, delta=5.0)
    dt = 0.02

    def one(weights, t_max, every, num_traj, seed):
        spec = SystemSpec.uniform(3, omega=1.0, weights=weights)
        table = solve_F_ou_fast(spec, lor, dt, t_max)
        probes = [round(k * every, 10) for k in range(int(t_max / every) + 1)]
        res = run_ensemble(spec, space, table, ou_kernel(lor), dt, t_max,
                           probes, num_traj, seed=seed, alpha=ALPHA,
                           batch_size=40, store_full=False)
        return probes, res

    probes_a, asym = one((1.0, 0.5, 1.5), 78.0, 3.0, 240, seed=6)
    probes_s, sym = one((1.0, 1.0, 1.0), 20.0, 4.0, 240, seed=7)
    return {"asym": (probes_a, asym), "sym": (probes_s, sym), "space": space}


def three_cavity_chain_fidelity(lam1, gamma, t_max, dt, every, num_traj,
                                seed, nc=14, batch=48):
    spec = SystemSpec.uniform(3, omega=1.0)
    spec = SystemSpec(spec.omegas, (lam1, 1.0, 0.0), spec.weights)
    space = FockSpace(3, nc)
    lor = LorentzSpec(gamma_big=1.0, gamma=gamma, delta=0.0)
    table = solve_F_ou_fast(spec, lor, dt, t_max)
    probes = [round(k * every, 10) for k in range(int(t_max / every) + 1)]
    res = run_ensemble(spec, space, table, ou_kernel(lor), dt, t_max, probes,
                       num_traj, seed=seed, alpha=ALPHA, batch_size=batch,
                       store_full=False)
    f2 = fidelity_of_reduced([r for r in (res.reduced_hats[1])], ALPHA, nc)
    f3 = fidelity_of_reduced([r for r in (res.reduced_hats[2])], ALPHA, nc)
    return np.asarray(probes), f2, f3


@pytest.fixture(scope="module")
def revival_runs():
    """Criterion-7 setup: directly coupled chain at long and short memory."""
    out = {}
    for tau, seed in ((3.0, 8), (0.5, 9)):
        times, f2, f3 = three_cavity_chain_fidelity(
            1.0, 1.0 / tau, t_max=30.0, dt=0.01, every=0.25, num_traj=160,
            seed=seed, batch=40)
        out[tau] = (times, f3)
    return out


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------

def test_criterion_1_environment_induced_transfer(fig2_run):
    fid = fig2_run["fidelity"]
    k = int(np.argmax(fid))
    best, t_best = fid[k], fig2_run["times"][k]
    passed = best >= 0.95
    record_criterion(
        1, "environment-induced transfer",
        passed, f"max F_2 = {best:.4f} at t = {t_best:g} (need >= 0.95)")
    assert passed


def test_criterion_2_markovian_coherence_loss(fig2_run, markov_side_run):
    cat_neg = negativity_volume(
        wigner_grid(cat_state(SINGLE20, 1, ALPHA).dyad(), window=6.0))

    k_m = int(np.argmax(markov_side_run["fidelity"]))
    rho_m = DensOp(SINGLE20, markov_side_run["reduced"][k_m])
    neg_markov = negativity_volume(wigner_grid(rho_m, window=6.0))

    k_n = int(np.argmax(fig2_run["fidelity"]))
    rho_n = DensOp(SINGLE20, fig2_run["reduced"][k_n])
    neg_nonmarkov = negativity_volume(wigner_grid(rho_n, window=6.0))

    passed = neg_markov < 1e-3 and neg_nonmarkov > 0.05 * cat_neg
    record_criterion(
        2, "Markovian coherence loss", passed,
        f"negativity {neg_markov:.2e} (< 1e-3) vs "
        f"{neg_nonmarkov:.3f} (> {0.05 * cat_neg:.3f})")
    assert passed


def test_criterion_3_markov_limit_of_coefficients():
    kernel = ou_kernel(LorentzSpec(1.0, 1000.0, 0.0))
    table = solve_f_history(SPEC2, kernel, 2e-5, 0.02)
    tail = effective_coupling_ratio(table)
    re_err = np.abs(tail.re - 0.5).max()
    im_max = np.abs(tail.im).max()
    passed = re_err <= 0.01 and im_max < 1e-3
    record_criterion(
        3, "Markov limit of coefficients", passed,
        f"tail Re F = {tail.re[0]:.4f} (within 2% of 0.5), "
        f"|Im F| = {im_max:.1e} (< 1e-3)")
    assert passed


def test_criterion_4_cross_solver_equivalence():
    dt, t_max = 5e-4, 2.0
    kernel = ou_kernel(LOR_FIG2)
    fine_fast = solve_F_ou_fast(SPEC2, LOR_FIG2, dt / 2, t_max)
    fine_hist = solve_f_history(SPEC2, kernel, dt / 2, t_max)
    scale = np.abs(fine_fast.F).max()
    rel = np.abs(fine_hist.F - fine_fast.F).max() / scale
    passed = rel <= 1e-6
    record_criterion(
        4, "cross-solver equivalence", passed,
        f"relative sup-norm disagreement {rel:.2e} after one dt halving "
        f"(need <= 1e-6)")
    assert passed


def test_criterion_5_trajectory_master_equivalence(equivalence_runs):
    master = equivalence_runs["master"]
    ens = equivalence_runs["ensemble"]
    lines = []
    ok = True
    for p, t in enumerate(equivalence_runs["probes"]):
        ref = master.rhos[p].mat
        total = ens.rho_hats[p].mat * ens.num_trajectories
        blocks = [b[p] for b in ens.rho_blocks]
        value, bias, se = jackknife_norm_stat(
            total, blocks, ens.block_sizes,
            lambda r: trace_distance(r, ref))
        ok = ok and value <= 3.0 * se
        lines.append(f"t={t:g}: D={value:.4f} se={se:.4f}")
    record_criterion(
        5, "trajectory-ensemble vs master equivalence", ok,
        "; ".join(lines) + " (need D <= 3 x jackknife error)")
    assert ok


def test_criterion_6_asymmetric_environment_routing(eta_routing_runs):
    probes, asym = eta_routing_runs["asym"]
    f3 = fidelity_of_reduced(asym.reduced_hats[2], ALPHA, 14)
    k = int(np.argmax(f3))
    best = f3[k]
    part_a = best >= 0.85

    probes_s, sym = eta_routing_runs["sym"]
    # symmetric weights: cavities 2 and 3 must agree within statistics
    worst = (0.0, 0.0, 0.0)
    part_b = True
    for p in range(len(probes_s)):
        tot2 = sym.reduced_hats[1][p] * sym.num_trajectories
        tot3 = sym.reduced_hats[2][p] * sym.num_trajectories
        blocks = [b2 - b3 for b2, b3 in
                  zip((blk[1][p] for blk in sym.reduced_blocks),
                      (blk[2][p] for blk in sym.reduced_blocks))]
        value, bias, se = jackknife_norm_stat(
            tot2 - tot3, blocks, sym.block_sizes,
            lambda d: 0.5 * float(np.abs(np.linalg.eigvalsh(
                (d + d.conj().T) / 2)).sum()))
        tol = bias + 3.0 * se
        if value > worst[0]:
            worst = (value, tol, probes_s[p])
        part_b = part_b and value <= tol
    passed = part_a and part_b
    record_criterion(
        6, "asymmetric-environment routing", passed,
        f"max F_3 = {best:.4f} at t = {probes[k]:g} (need >= 0.85); "
        f"eta=0 reduced-state distance {worst[0]:.4f} vs tolerance "
        f"{worst[1]:.4f}")
    assert passed


def second_peaks(times, values, prominence=0.05):
    """Local maxima after the first transfer peak, on a lightly smoothed
    curve so ensemble noise cannot fabricate extra extrema."""
    kernel = np.ones(3) / 3.0
    smooth = np.convolve(values, kernel, mode="same")
    spacing = times[1] - times[0]
    peaks, _ = scipy.signal.find_peaks(
        smooth, prominence=prominence, distance=max(1, int(1.5 / spacing)))
    if len(peaks) == 0:
        return []
    return [(times[i], smooth[i]) for i in peaks[1:]]


def test_criterion_7_revival_under_finite_couplings(revival_runs):
    t3, f3_long = revival_runs[3.0]
    t05, f3_short = revival_runs[0.5]
    revivals_long = second_peaks(t3, f3_long)
    revivals_short = second_peaks(t05, f3_short)
    best_long = max((v for _, v in revivals_long), default=0.0)
    best_short = max((v for _, v in revivals_short), default=0.0)
    passed = best_long >= 0.5 and best_short <= 0.3
    record_criterion(
        7, "revival under finite couplings", passed,
        f"tau=3 second maximum {best_long:.3f} (need >= 0.5); "
        f"tau=0.5 second maximum {best_short:.3f} (need <= 0.3)")
    assert passed


def test_criterion_8_coupling_asymmetry_routing():
    lam_values = np.arange(0.25, 3.25 + 1e-9, 0.25)
    max2, max3 = [], []
    for i, lam1 in enumerate(lam_values):
        _, f2, f3 = three_cavity_chain_fidelity(
            float(lam1), 1.0 / 3.0, t_max=12.0, dt=0.0125, every=0.25,
            num_traj=96, seed=100 + i)
        max2.append(f2.max())
        max3.append(f3.max())
    arg2 = lam_values[int(np.argmax(max2))]
    arg3 = lam_values[int(np.argmax(max3))]
    passed = abs(arg2 - arg3) >= 0.25 - 1e-12
    record_criterion(
        8, "coupling-asymmetry routing", passed,
        f"argmax lambda_1: F_2 at {arg2:g}, F_3 at {arg3:g} "
        f"(need to differ by >= one step)")
    assert passed


def test_criterion_9_thermal_reduction():
    spec = SPEC2
    lor = LorentzSpec(1.0, 0.5, 8.0)
    dt, t_max = 0.02, 1.0
    steps = int(round(t_max / dt))
    u = np.arange(steps + 1) * dt
    pair = thermal_kernels(lor, beta=1e3, u_grid=u)
    grids = solve_thermal_coeffs(spec, pair, dt, t_max, step_cap=60)
    table, hist = solve_f_history(spec, pair.k1_kernel(), dt, t_max,
                                  return_history=True)
    n = grids.x.shape[0] - 1
    dev = np.abs(grids.x[n].T - hist.columns).max()
    coupling = max(np.abs(grids.Y).max(), np.abs(grids.Yp).max())
    passed = dev <= 1e-8 and coupling <= 1e-8
    record_criterion(
        9, "finite-temperature reduction", passed,
        f"x vs f sup deviation {dev:.1e} (<= 1e-8); K2-side coupling "
        f"terms {coupling:.1e} (<= 1e-8)")
    assert passed


def test_criterion_10_conservation_suite(fig2_run, markov_side_run):
    runs = {"slow-memory": fig2_run["run"], "short-memory": markov_side_run["run"]}
    trace_worst = max(r.trace_error.max() for r in runs.values())
    herm_worst = max(r.hermiticity.max() for r in runs.values())
    eig_worst = min(np.nanmin(r.min_eigenvalue) for r in runs.values())

    # decoupled check: purity stays put without an environment
    spec = SPEC2
    table0 = markov_coefficients(spec, 0.0, 0.0025, 2.0)
    run0 = run_master(spec, SPACE2, table0, 0.0025, 2.0, [0.0, 1.0, 2.0],
                      alpha=ALPHA)
    purity_drift = max(abs(r.purity() - 1.0) for r in run0.rhos)

    passed = (trace_worst <= 1e-6 and herm_worst <= 1e-12
              and eig_worst >= -1e-8 and purity_drift <= 1e-10)
    record_criterion(
        10, "conservation suite", passed,
        f"trace drift {trace_worst:.1e} (<= 1e-6), hermiticity "
        f"{herm_worst:.1e} (<= 1e-12), min eigenvalue {eig_worst:.1e} "
        f"(>= -1e-8), closed-system purity drift {purity_drift:.1e} "
        f"(<= 1e-10)")
    assert passed
