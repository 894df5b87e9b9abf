"""File formats: versioned CSV schemas, binary state dumps, run manifests.

Every CSV starts with a schema line ``# schema: cradle/<kind> v1`` so files
stay self-describing; the readers here round-trip everything the writers
emit.  All text is UTF-8, numbers are written with repr-faithful precision.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coeffs import CoefficientTable
from .kernels import EnvKernel, tabulated_kernel
from .observables import FidelityCurve, WignerGrid

SCHEMAS = {
    "fidelity": "# schema: cradle/fidelity-curve v1",
    "coeff": "# schema: cradle/coeff-table v1",
    "wigner": "# schema: cradle/wigner-grid v1",
    "sweep": "# schema: cradle/sweep-fidelity v1",
    "sweep-summary": "# schema: cradle/sweep-summary v1",
    "coeff-map": "# schema: cradle/coeff-map v1",
    "kernel": "# schema: cradle/kernel-table v1",
}


class SchemaError(ValueError):
    pass


def _fmt(x) -> str:
    return repr(float(x))


def _check_schema(line: str, kind: str, path) -> None:
    if line.strip() != SCHEMAS[kind]:
        raise SchemaError(
            f"{path}: expected '{SCHEMAS[kind]}', found '{line.strip()}'"
        )


# -- fidelity curves --------------------------------------------------------

def write_fidelity_csv(path, curve: FidelityCurve) -> None:
    n_cav = curve.fidelity.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(SCHEMAS["fidelity"] + "\n")
        w = csv.writer(fh)
        w.writerow(["t"] + [f"F_{i+1}" for i in range(n_cav)]
                   + [f"theta_{i+1}" for i in range(n_cav)])
        for p, t in enumerate(curve.times):
            w.writerow([_fmt(t)] + [_fmt(v) for v in curve.fidelity[p]]
                       + [_fmt(v) for v in curve.theta[p]])


def read_fidelity_csv(path) -> FidelityCurve:
    with open(path, newline="", encoding="utf-8") as fh:
        _check_schema(fh.readline(), "fidelity", path)
        rows = list(csv.reader(fh))
    header, data = rows[0], np.array(rows[1:], dtype=float)
    n_cav = sum(1 for h in header if h.startswith("F_"))
    return FidelityCurve(times=data[:, 0],
                         fidelity=data[:, 1:1 + n_cav],
                         theta=data[:, 1 + n_cav:1 + 2 * n_cav])


# -- coefficient tables -----------------------------------------------------

def write_coeff_csv(path, table: CoefficientTable) -> None:
    n = table.num_modes
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(SCHEMAS["coeff"] + "\n")
        fh.write(f"# provenance: {table.provenance}\n")
        w = csv.writer(fh)
        w.writerow(["t"] + [x for i in range(n)
                            for x in (f"re_F{i+1}", f"im_F{i+1}")])
        for k, t in enumerate(table.times):
            row = [_fmt(t)]
            for i in range(n):
                row += [_fmt(table.F[k, i].real), _fmt(table.F[k, i].imag)]
            w.writerow(row)


def read_coeff_csv(path) -> CoefficientTable:
    with open(path, newline="", encoding="utf-8") as fh:
        _check_schema(fh.readline(), "coeff", path)
        prov_line = fh.readline().strip()
        provenance = prov_line.split(":", 1)[1].strip() if ":" in prov_line else "unknown"
        rows = list(csv.reader(fh))
    data = np.array(rows[1:], dtype=float)
    times = data[:, 0]
    n = (data.shape[1] - 1) // 2
    F = data[:, 1::2] + 1j * data[:, 2::2]
    dts = np.diff(times)
    if len(dts) and (dts.max() - dts.min()) > 1e-9 * dts.max():
        raise SchemaError(f"{path}: non-uniform time grid")
    return CoefficientTable(dt=float(dts[0]) if len(dts) else 1.0,
                            F=F, provenance=provenance)


# -- Wigner grids -----------------------------------------------------------

def write_wigner_csv(path, grid: WignerGrid, probe_time: float | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(SCHEMAS["wigner"] + "\n")
        meta = (f"# window: x [{_fmt(grid.xs[0])}, {_fmt(grid.xs[-1])}] "
                f"p [{_fmt(grid.ps[0])}, {_fmt(grid.ps[-1])}] "
                f"resolution {len(grid.xs)} mode {grid.mode}")
        if probe_time is not None:
            meta += f" t {_fmt(probe_time)}"
        if grid.boundary_warning:
            meta += " boundary-warning"
        fh.write(meta + "\n")
        w = csv.writer(fh)
        w.writerow(["x", "p", "W"])
        for r, p in enumerate(grid.ps):
            for c, x in enumerate(grid.xs):
                w.writerow([_fmt(x), _fmt(p), _fmt(grid.values[r, c])])


def read_wigner_csv(path) -> WignerGrid:
    with open(path, newline="", encoding="utf-8") as fh:
        _check_schema(fh.readline(), "wigner", path)
        meta = fh.readline()
        rows = list(csv.reader(fh))
    toks = meta.split()
    mode = int(toks[toks.index("mode") + 1]) if "mode" in toks else 1
    warning = "boundary-warning" in meta
    data = np.array(rows[1:], dtype=float)
    xs = np.unique(data[:, 0])
    ps = np.unique(data[:, 1])
    vals = data[:, 2].reshape(len(ps), len(xs))
    return WignerGrid(xs=xs, ps=ps, values=vals, mode=mode,
                      boundary_warning=warning)


# -- kernel tables ----------------------------------------------------------

def write_kernel_csv(path, u: np.ndarray, k: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(SCHEMAS["kernel"] + "\n")
        w = csv.writer(fh)
        w.writerow(["u", "re_k", "im_k"])
        for ui, ki in zip(u, k):
            w.writerow([_fmt(ui), _fmt(ki.real), _fmt(ki.imag)])


def read_kernel_csv(path) -> EnvKernel:
    """Tabulated kernel from (u, Re K, Im K) rows; linear interpolation."""
    with open(path, newline="", encoding="utf-8") as fh:
        _check_schema(fh.readline(), "kernel", path)
        rows = list(csv.reader(fh))
    data = np.array(rows[1:], dtype=float)
    return tabulated_kernel(data[:, 0], data[:, 1] + 1j * data[:, 2])


# -- sweep outputs ----------------------------------------------------------

def write_sweep_csv(path, parameter: str, blocks) -> None:
    """Long format: one row per (sweep value, probe time).

    blocks is a list of (value, FidelityCurve).
    """
    if not blocks:
        raise ValueError("no sweep points to write")
    n_cav = blocks[0][1].fidelity.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(SCHEMAS["sweep"] + "\n")
        fh.write(f"# parameter: {parameter}\n")
        w = csv.writer(fh)
        w.writerow([parameter, "t"] + [f"F_{i+1}" for i in range(n_cav)])
        for value, curve in blocks:
            for p, t in enumerate(curve.times):
                w.writerow([_fmt(value), _fmt(t)]
                           + [_fmt(v) for v in curve.fidelity[p]])


def read_sweep_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        _check_schema(fh.readline(), "sweep", path)
        param_line = fh.readline().strip()
        parameter = param_line.split(":", 1)[1].strip()
        rows = list(csv.reader(fh))
    data = np.array(rows[1:], dtype=float)
    return parameter, rows[0], data


def write_sweep_summary_csv(path, parameter: str, summaries) -> None:
    """Per-point maxima: rows (value, max_F_i, argmax_t_i, ...)."""
    if not summaries:
        raise ValueError("no sweep points to write")
    n_cav = len(summaries[0][1])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(SCHEMAS["sweep-summary"] + "\n")
        w = csv.writer(fh)
        w.writerow([parameter]
                   + [x for i in range(n_cav)
                      for x in (f"max_F_{i+1}", f"argmax_t_{i+1}")])
        for value, maxima, argmax in summaries:
            row = [_fmt(value)]
            for i in range(n_cav):
                row += [_fmt(maxima[i]), _fmt(argmax[i])]
            w.writerow(row)


def read_sweep_summary_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        _check_schema(fh.readline(), "sweep-summary", path)
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def write_coeff_map_csv(path, rows_out, n_modes: int) -> None:
    """Long-time coefficient map rows (delta, tau, re/im/ratio per mode)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(SCHEMAS["coeff-map"] + "\n")
        w = csv.writer(fh)
        w.writerow(["delta", "tau"]
                   + [x for i in range(n_modes)
                      for x in (f"re_F{i+1}", f"im_F{i+1}", f"ratio_{i+1}")])
        for row in rows_out:
            w.writerow([_fmt(v) for v in row])


def read_coeff_map_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        _check_schema(fh.readline(), "coeff-map", path)
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


# -- binary state dumps -----------------------------------------------------

def write_state_binary(path, rho: np.ndarray, space, probe_time: float) -> None:
    """Row-major little-endian (re, im) float64 pairs plus a JSON sidecar
    describing dimensions and basis ordering."""
    path = Path(path)
    flat = np.empty(rho.size * 2, dtype="<f8")
    flat[0::2] = rho.real.ravel()
    flat[1::2] = rho.imag.ravel()
    flat.tofile(path)
    sidecar = {
        "schema": "cradle/state-binary v1",
        "kind": "density-operator",
        "dtype": "little-endian float64 (re, im) pairs, row-major",
        "dim": int(rho.shape[0]),
        "num_modes": int(space.num_modes),
        "cutoff": int(space.cutoff),
        "basis_ordering": "mode 1 slowest index; |n1..nN> at sum n_i cutoff^(N-i)",
        "probe_time": float(probe_time),
    }
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, indent=2) + "\n", encoding="utf-8"
    )


def read_state_binary(path):
    path = Path(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    d = sidecar["dim"]
    flat = np.fromfile(path, dtype="<f8")
    rho = (flat[0::2] + 1j * flat[1::2]).reshape(d, d)
    return rho, sidecar


# -- manifests --------------------------------------------------------------

def sha256_of(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Everything needed to audit or replay a run."""

    command: str
    resolved_config: dict
    version: str
    seed: int
    reconstruction: bool = False
    preset: str | None = None
    wall_time_s: float = 0.0
    diagnostics: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def add_output(self, path) -> None:
        p = Path(path)
        self.outputs.append({
            "path": p.name,
            "bytes": p.stat().st_size,
            "sha256": sha256_of(p),
        })

    def write(self, path) -> None:
        doc = {
            "schema": "cradle/run-manifest v1",
            "command": self.command,
            "version": self.version,
            "seed": self.seed,
            "preset": self.preset,
            "reconstruction": self.reconstruction,
            "wall_time_s": round(self.wall_time_s, 3),
            "diagnostics": self.diagnostics,
            "resolved_config": self.resolved_config,
            "outputs": self.outputs,
            "failures": self.failures,
        }
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n",
                              encoding="utf-8")

    @staticmethod
    def load(path) -> dict:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("schema") != "cradle/run-manifest v1":
            raise SchemaError(f"{path}: not a run manifest")
        return doc
