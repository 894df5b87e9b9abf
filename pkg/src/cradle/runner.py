"""Experiment orchestration: resolve a config, run it, emit artifacts.

One place owns the gritty defaults: horizon estimation from the long-time
coefficients, probe-grid snapping, solver selection (master for one or two
cavities, trajectory ensemble above that), and the dt-halving convergence
check on the cavity-2 fidelity curve.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig
from .coeffs import (CoefficientTable, SolverBlowupError,
                     effective_coupling_ratio, markov_coefficients,
                     solve_F_ou_fast, solve_f_history)
from .dynamics import run_ensemble, run_master, trace_distance
from .fock import DensOp, FockSpace, SystemSpec, partial_trace, recommended_cutoff
from .io import (RunManifest, read_kernel_csv, write_coeff_csv,
                 write_coeff_map_csv, write_fidelity_csv, write_state_binary,
                 write_sweep_csv, write_sweep_summary_csv, write_wigner_csv)
from .kernels import (EnvKernel, LorentzSpec, markovian_kernel, ou_kernel)
from .observables import FidelityCurve, fidelity_curve, wigner_grid

T_MAX_CEILING = 2000.0


def build_kernel(cfg: ExperimentConfig) -> EnvKernel:
    env = cfg.environment
    if env.kind == "ou":
        return ou_kernel(LorentzSpec(env.gamma_big, env.gamma, env.delta))
    if env.kind == "markov":
        return markovian_kernel(env.gamma_big)
    if env.kind == "tabulated":
        return read_kernel_csv(env.kernel_csv)
    raise ConfigError(f"unhandled environment kind '{env.kind}'")


def estimate_tail_coefficients(spec: SystemSpec, lorentz: LorentzSpec):
    """Cheap long-time (Re F, Im F) estimate from the closed ODE system."""
    horizon = max(20.0 / lorentz.gamma, 50.0)
    scale = max(abs(lorentz.delta) + max(abs(w) for w in spec.omegas),
                lorentz.gamma, 1.0)
    dt = min(0.1, 0.2 / scale)
    steps = int(round(horizon / dt))
    table = solve_F_ou_fast(spec, lorentz, dt, steps * dt)
    return effective_coupling_ratio(table)


def default_t_max(cfg: ExperimentConfig) -> float:
    """Horizon: 30 for directly coupled chains, else driven by the
    environment-induced coupling scale (the transfer slows as 1/|Im F|)."""
    if any(l != 0.0 for l in cfg.system.lam):
        return 30.0
    if cfg.environment.kind != "ou":
        return 300.0
    spec = cfg.system_spec()
    lor = LorentzSpec(cfg.environment.gamma_big, cfg.environment.gamma,
                      cfg.environment.delta)
    tail = estimate_tail_coefficients(spec, lor)
    im = np.abs(tail.im).max()
    if im < 1e-6:
        return 300.0
    return float(min(max(300.0, 3.0 * math.pi / (4.0 * im)), T_MAX_CEILING))


def build_table(cfg: ExperimentConfig, dt: float, t_max: float) -> CoefficientTable:
    spec = cfg.system_spec()
    env = cfg.environment
    if env.kind == "markov":
        return markov_coefficients(spec, env.gamma_big, dt, t_max)
    if env.kind == "ou":
        lor = LorentzSpec(env.gamma_big, env.gamma, env.delta)
        if cfg.numerics.coeff_solver == "history":
            return solve_f_history(spec, ou_kernel(lor), dt, t_max)
        return solve_F_ou_fast(spec, lor, dt, t_max)
    return solve_f_history(spec, build_kernel(cfg), dt, t_max)


def resolve_grid(cfg: ExperimentConfig):
    """(dt, t_max, probe_times) with everything snapped onto the step grid."""
    dt = cfg.numerics.dt
    t_max = cfg.numerics.t_max
    if t_max is None:
        t_max = default_t_max(cfg)
    steps = max(1, int(round(t_max / dt)))
    t_max = steps * dt
    if cfg.output.probe_times is not None:
        probes = [round(t / dt) * dt for t in cfg.output.probe_times]
    else:
        every = cfg.output.probe_every
        if every is None:
            every = max(t_max / 200.0, dt)
        stride = max(1, int(round(every / dt)))
        probes = [k * dt for k in range(0, steps + 1, stride)]
        if probes[-1] != t_max:
            probes.append(t_max)
    return dt, t_max, probes


@dataclass
class RunOutcome:
    """In-memory result of one experiment point."""

    solver: str
    times: np.ndarray
    reduced: list                      # [probe][cavity] -> DensOp
    curve: FidelityCurve
    monitors: dict
    convergence: dict | None = None
    full_states: dict = field(default_factory=dict)   # probe time -> ndarray


def _reduced_from_full(space, rho_mat):
    full = DensOp(space, rho_mat)
    return [partial_trace(full, i) for i in range(1, space.num_modes + 1)]


def execute_run(cfg: ExperimentConfig, check_convergence=None) -> RunOutcome:
    """Run one point and compute the per-cavity fidelity curve."""
    spec = cfg.system_spec()
    space = FockSpace(cfg.system.cavities, cfg.numerics.cutoff)
    dt, t_max, probes = resolve_grid(cfg)
    table = build_table(cfg, dt, t_max)
    alpha = cfg.system.alpha
    solver = cfg.numerics.solver
    if solver == "auto":
        solver = "master" if space.num_modes <= 2 else "ensemble"
    if check_convergence is None:
        check_convergence = cfg.numerics.convergence_check

    dump_times = set(round(t / dt) * dt for t in cfg.output.dump_rho_times)
    full_states = {}

    if solver == "master":
        def on_probe(t, rho):
            if t in dump_times:
                full_states[t] = rho.copy()
            return _reduced_from_full(space, rho)

        run = run_master(spec, space, table, dt, t_max, probes,
                         alpha=alpha, initial_cavity=cfg.system.initial_cavity,
                         store_states=False, on_probe=on_probe)
        reduced = run.probe_values
        monitors = {
            "trace_error_max": float(run.trace_error.max()),
            "hermiticity_max": float(run.hermiticity.max()),
            "min_eigenvalue": float(np.nanmin(run.min_eigenvalue)),
            "top_level_population_max": float(run.top_level_population.max()),
        }
    else:
        kernel = build_kernel(cfg)
        res = run_ensemble(spec, space, table, kernel, dt, t_max, probes,
                           cfg.numerics.trajectories, seed=cfg.numerics.seed,
                           alpha=alpha, initial_cavity=cfg.system.initial_cavity,
                           batch_size=cfg.numerics.batch_size)
        nc_space = FockSpace(1, space.cutoff)
        reduced = [[DensOp(nc_space, res.reduced_hats[i][p])
                    for i in range(space.num_modes)]
                   for p in range(len(res.times))]
        if res.rho_hats is not None:
            for t in dump_times:
                k = np.argmin(np.abs(res.times - t))
                if abs(res.times[k] - t) < 1e-9:
                    full_states[t] = res.rho_hats[int(k)].mat
        monitors = {
            "trace_mean_min": float(res.trace_mean.min()),
            "trace_mean_max": float(res.trace_mean.max()),
            "trajectories": res.num_trajectories,
        }
        run = res

    curve = fidelity_curve(probes, reduced, alpha,
                           theta_grid=cfg.numerics.theta_grid)

    convergence = None
    if check_convergence and solver == "master":
        fine = ExperimentConfig.from_dict(cfg.to_dict())
        fine.numerics.dt = dt / 2.0
        fine.numerics.t_max = t_max
        fine.output.probe_times = tuple(probes)
        fine.numerics.convergence_check = False
        fine_out = execute_run(fine, check_convergence=False)
        target = min(1, space.num_modes - 1)
        change = float(np.abs(curve.fidelity[:, target]
                              - fine_out.curve.fidelity[:, target]).max())
        convergence = {
            "observable": f"F_{target + 1}",
            "dt": dt,
            "dt_half": dt / 2.0,
            "sup_change": change,
            "passed": bool(change < 5e-3),
            "coarse": curve.fidelity[:, target].tolist(),
            "fine": fine_out.curve.fidelity[:, target].tolist(),
        }

    return RunOutcome(solver=solver, times=np.asarray(probes), reduced=reduced,
                      curve=curve, monitors=monitors, convergence=convergence,
                      full_states=full_states)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def apply_sweep_value(cfg: ExperimentConfig, parameter: str,
                      value: float) -> ExperimentConfig:
    doc = cfg.to_dict()
    doc.pop("sweep", None)
    point = ExperimentConfig.from_dict(doc)
    if parameter == "tau":
        point.environment.gamma = 1.0 / value
    elif parameter == "gamma":
        point.environment.gamma = value
    elif parameter == "delta":
        point.environment.delta = value
    elif parameter == "gamma_big":
        point.environment.gamma_big = value
    elif parameter == "alpha":
        point.system.alpha = value
    elif parameter == "eta":
        if point.system.cavities != 3:
            raise ConfigError("eta sweep requires three cavities")
        from .fock import weights_from_eta
        point.system.weights = weights_from_eta(value)
    elif parameter == "lambda1":
        lam = list(point.system.lam)
        lam[0] = value
        point.system.lam = tuple(lam)
    else:
        raise ConfigError(f"cannot sweep '{parameter}'")
    return point


def _sweep_point(payload):
    cfg_doc, parameter, value = payload
    cfg = ExperimentConfig.from_dict(cfg_doc)
    point = apply_sweep_value(cfg, parameter, value)
    out = execute_run(point)
    extras = {}
    if point.system.cavities >= 3:
        dists = [trace_distance(red[1].mat, red[2].mat) for red in out.reduced]
        extras["rho2_rho3_max_distance"] = float(max(dists))
    return {
        "value": value,
        "times": out.times.tolist(),
        "fidelity": out.curve.fidelity.tolist(),
        "theta": out.curve.theta.tolist(),
        "monitors": out.monitors,
        "extras": extras,
        "solver": out.solver,
    }


def run_sweep(cfg: ExperimentConfig, workers: int = 1):
    """Execute every sweep point; per-point failures are recorded and the
    remaining points still run.  Returns (results, failures), results sorted
    by sweep value regardless of execution order."""
    if cfg.sweep is None:
        raise ConfigError("config has no [sweep] section")
    payloads = [(cfg.to_dict(), cfg.sweep.parameter, v)
                for v in cfg.sweep.values]
    results, failures = [], []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = list(pool.map(_sweep_point_safe, payloads))
        for value, res, err in futures:
            (results if err is None else failures).append(
                res if err is None else {"value": value, "error": err})
    else:
        for payload in payloads:
            value, res, err = _sweep_point_safe(payload)
            if err is None:
                results.append(res)
            else:
                failures.append({"value": value, "error": err})
    results.sort(key=lambda r: r["value"])
    failures.sort(key=lambda r: r["value"])
    return results, failures


def _sweep_point_safe(payload):
    value = payload[2]
    try:
        return value, _sweep_point(payload), None
    except Exception as exc:             # per-point isolation by design
        return value, None, f"{type(exc).__name__}: {exc}"


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _write_wigner_outputs(out_dir: Path, cfg, outcome, manifest):
    window = cfg.output.wigner_window
    if window is None:
        window = abs(cfg.system.alpha) + 4.0
    for t_req in cfg.output.wigner_times:
        k = int(np.argmin(np.abs(outcome.times - t_req)))
        for cav in range(1, cfg.system.cavities + 1):
            grid = wigner_grid(outcome.reduced[k][cav - 1], window=window,
                               resolution=cfg.output.wigner_resolution,
                               mode=cav)
            name = f"wigner_c{cav}_t{outcome.times[k]:g}.csv"
            write_wigner_csv(out_dir / name, grid,
                             probe_time=float(outcome.times[k]))
            manifest.add_output(out_dir / name)


def cmd_run(cfg: ExperimentConfig, out_dir, command="run", preset=None,
            reconstruction=False) -> RunManifest:
    t0 = time.time()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(command=command, resolved_config=cfg.to_dict(),
                           version=__version__, seed=cfg.numerics.seed,
                           preset=preset, reconstruction=reconstruction)
    outcome = execute_run(cfg)
    write_fidelity_csv(out_dir / "fidelity.csv", outcome.curve)
    manifest.add_output(out_dir / "fidelity.csv")
    _write_wigner_outputs(out_dir, cfg, outcome, manifest)
    space = FockSpace(cfg.system.cavities, cfg.numerics.cutoff)
    for t, rho in sorted(outcome.full_states.items()):
        name = f"rho_t{t:g}.bin"
        write_state_binary(out_dir / name, rho, space, t)
        manifest.add_output(out_dir / name)
        manifest.add_output(out_dir / (name + ".json"))
    manifest.diagnostics = {
        "solver": outcome.solver,
        "monitors": outcome.monitors,
        "max_fidelity": {
            f"F_{i+1}": float(outcome.curve.fidelity[:, i].max())
            for i in range(cfg.system.cavities)
        },
    }
    if outcome.convergence is not None:
        manifest.diagnostics["convergence"] = outcome.convergence
    manifest.wall_time_s = time.time() - t0
    manifest.write(out_dir / "manifest.json")
    return manifest


def cmd_sweep(cfg: ExperimentConfig, out_dir, workers: int = 1,
              command="sweep", preset=None, reconstruction=False) -> RunManifest:
    t0 = time.time()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(command=command, resolved_config=cfg.to_dict(),
                           version=__version__, seed=cfg.numerics.seed,
                           preset=preset, reconstruction=reconstruction)
    results, failures = run_sweep(cfg, workers=workers)
    if results:
        blocks, summaries = [], []
        for res in results:
            curve = FidelityCurve(times=np.array(res["times"]),
                                  fidelity=np.array(res["fidelity"]),
                                  theta=np.array(res["theta"]))
            blocks.append((res["value"], curve))
            maxima = curve.fidelity.max(axis=0)
            argmax = curve.times[np.argmax(curve.fidelity, axis=0)]
            summaries.append((res["value"], maxima, argmax))
        write_sweep_csv(out_dir / "sweep.csv", cfg.sweep.parameter, blocks)
        manifest.add_output(out_dir / "sweep.csv")
        write_sweep_summary_csv(out_dir / "sweep_summary.csv",
                                cfg.sweep.parameter, summaries)
        manifest.add_output(out_dir / "sweep_summary.csv")
        manifest.diagnostics["points"] = {
            repr(float(r["value"])): {"monitors": r["monitors"],
                                      "extras": r["extras"],
                                      "solver": r["solver"]}
            for r in results
        }
    manifest.failures = failures
    manifest.wall_time_s = time.time() - t0
    manifest.write(out_dir / "manifest.json")
    return manifest


def cmd_coeffs(cfg: ExperimentConfig, out_dir, command="coeffs", preset=None,
               reconstruction=False, map_deltas=None, map_taus=None) -> RunManifest:
    """Coefficient tables and long-time summaries, no state propagation."""
    t0 = time.time()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(command=command, resolved_config=cfg.to_dict(),
                           version=__version__, seed=cfg.numerics.seed,
                           preset=preset, reconstruction=reconstruction)
    spec = cfg.system_spec()
    dt = cfg.numerics.dt
    t_max = cfg.numerics.t_max
    if t_max is None:
        t_max = 50.0 if cfg.environment.kind == "markov" \
            else max(50.0, 20.0 / cfg.environment.gamma)
    t_max = max(1, int(round(t_max / dt))) * dt

    values = cfg.sweep.values if cfg.sweep is not None else [None]
    tables = []
    for value in values:
        point = cfg if value is None else apply_sweep_value(
            cfg, cfg.sweep.parameter, value)
        table = build_table(point, dt, t_max)
        tables.append((value, point, table))
        suffix = "" if value is None else f"_{cfg.sweep.parameter}{value:g}"
        name = f"coeffs{suffix}.csv"
        write_coeff_csv(out_dir / name, table)
        manifest.add_output(out_dir / name)

    tail_rows = {}
    for value, point, table in tables:
        tail = effective_coupling_ratio(table)
        key = "single" if value is None else repr(float(value))
        tail_rows[key] = {
            "re": tail.re.tolist(), "im": tail.im.tolist(),
            "ratio": tail.ratio.tolist(), "stationary": tail.stationary,
            "drift": tail.drift,
        }
    manifest.diagnostics["tail"] = tail_rows

    if map_deltas is not None and map_taus is not None:
        rows = []
        env = cfg.environment
        for delta in map_deltas:
            for tau in map_taus:
                lor = LorentzSpec(env.gamma_big, 1.0 / tau, delta)
                horizon = max(50.0, 20.0 * tau)
                scale = max(abs(delta) + max(abs(w) for w in spec.omegas),
                            1.0 / tau, 1.0)
                dtm = min(0.05, 0.2 / scale)
                steps = int(round(horizon / dtm))
                row = [delta, tau]
                try:
                    table = solve_F_ou_fast(spec, lor, dtm, steps * dtm)
                    tail = effective_coupling_ratio(table)
                    for i in range(spec.num_cavities):
                        row += [tail.re[i], tail.im[i], tail.ratio[i]]
                except SolverBlowupError as exc:
                    # genuine finite-time divergence of the coefficient
                    # system (resonant bath with long memory); keep the
                    # grid rectangular and record the failure
                    row += [math.nan] * (3 * spec.num_cavities)
                    manifest.failures.append(
                        {"delta": float(delta), "tau": float(tau),
                         "error": str(exc)})
                rows.append(row)
        write_coeff_map_csv(out_dir / "coeff_map.csv", rows,
                            spec.num_cavities)
        manifest.add_output(out_dir / "coeff_map.csv")

    manifest.wall_time_s = time.time() - t0
    manifest.write(out_dir / "manifest.json")
    return manifest


def cmd_validate(cfg: ExperimentConfig) -> dict:
    """Static sanity report: cutoff rule, dt resolution, memory estimates."""
    report = {"checks": [], "ok": True}

    def check(name, ok, detail):
        report["checks"].append({"name": name, "ok": bool(ok),
                                 "detail": detail})
        if not ok:
            report["ok"] = False

    alpha = cfg.system.alpha
    need = recommended_cutoff(alpha)
    nc = cfg.numerics.cutoff
    check("cutoff", nc >= need,
          f"cutoff {nc} vs recommended {need} for alpha={alpha:g}")

    scales = [abs(w) for w in cfg.system.omega]
    scales += [abs(l) for l in cfg.system.lam]
    if cfg.environment.kind == "ou":
        scales.append(cfg.environment.gamma)
        scales += [abs(cfg.environment.delta - w) for w in cfg.system.omega]
    fastest = max(s for s in scales if s > 0) if any(scales) else 1.0
    dt_needed = 2.0 * math.pi / fastest / 20.0
    check("dt", cfg.numerics.dt <= dt_needed,
          f"dt {cfg.numerics.dt:g} vs {dt_needed:.3g} "
          f"(20 points per fastest period)")

    n = cfg.system.cavities
    dim = nc**n
    master_bytes = 6 * 16 * dim * dim
    ens_bytes = 16 * dim * (cfg.numerics.batch_size * 6)
    solver = cfg.numerics.solver
    if solver == "auto":
        solver = "master" if n <= 2 else "ensemble"
    limit = 1 << 30
    if solver == "master":
        ok = master_bytes <= limit
        detail = (f"master path needs ~{master_bytes / 1e9:.2f} GB "
                  f"(dim {dim})")
        if not ok:
            detail += (f"; trajectory path would need "
                       f"~{ens_bytes / 1e6:.0f} MB, consider solver=ensemble")
        check("memory", ok, detail)
    else:
        check("memory", ens_bytes <= limit,
              f"ensemble path needs ~{ens_bytes / 1e6:.0f} MB "
              f"(dim {dim}, batch {cfg.numerics.batch_size})")
    return report
