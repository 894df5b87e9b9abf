"""State propagation: non-Markovian master equation and linear stochastic
trajectories.

Both propagators consume a CoefficientTable.  With Obar(t) = sum_k F_k(t) a_k
and A the collective coupling operator, the master equation reads

    d rho / dt = -i [H_S, rho] + [A, rho Obar(t)^dag] + [Obar(t) rho, A^dag],

whose bracket-plus-conjugate structure is evaluated explicitly so Hermiticity
is preserved to round-off.  The linear trajectory equation is

    d psi / dt = [-i H_S + A z*_t - A^dag Obar(t)] psi,

driven by colored complex Gaussian noise; single trajectories are not
normalised, and the dyad average over trajectories recovers rho.

The trajectory path stores kets of size cutoff^N and is the memory-frugal
route for three or more cavities; the master path stores cutoff^(2N) entries
and is the default for one or two.  Trajectories propagate in vectorised
batches; per-trajectory seeds make results independent of batch and worker
partitioning.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .coeffs import CoefficientTable
from .fock import DensOp, FockSpace, Ket, SystemSpec, cat_state, \
    build_system_hamiltonian, collective_operator, mode_annihilator
from .kernels import EnvKernel, LorentzSpec, NoisePath, _circular_gaussian


class PropagationError(RuntimeError):
    pass


def _rotating_omega(spec: SystemSpec, rotating_frame):
    """Common rotation frequency, or None to integrate in the lab frame.

    With equal cavity frequencies the free rotation exp(-i Omega N t)
    commutes with the collective dissipator (every a_i picks up the same
    phase, which cancels between Obar and its adjoint), so the integrator
    can drop the fastest timescale entirely and rotate probes back exactly.
    """
    equal = all(w == spec.omegas[0] for w in spec.omegas)
    if rotating_frame is None:
        return spec.omegas[0] if equal and spec.omegas[0] != 0.0 else None
    if rotating_frame:
        if not equal:
            raise ValueError(
                "rotating-frame propagation requires equal cavity frequencies"
            )
        return spec.omegas[0]
    return None


def _frame_ops(spec: SystemSpec, space: FockSpace, omega_rot):
    if omega_rot is None:
        return ArrayOps(spec, space)
    shifted = SystemSpec(tuple(w - omega_rot for w in spec.omegas),
                         spec.lambdas, spec.weights)
    return ArrayOps(shifted, space)


def _as_probe_indices(probe_times, dt, steps):
    """Map probe times onto integration-grid indices (must coincide)."""
    idx = []
    for t in probe_times:
        k = int(round(t / dt))
        if not 0 <= k <= steps or abs(k * dt - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(
                f"probe time {t} is not on the integration grid (dt={dt})"
            )
        idx.append(k)
    if any(b <= a for a, b in zip(idx, idx[1:])):
        raise ValueError("probe times must be strictly increasing")
    return idx


class ArrayOps:
    """Cached sparse operators of one (spec, space) pair.

    Obar(t) = sum_k F_k(t) a_k is assembled into a fixed-sparsity template:
    the annihilators of different modes touch disjoint matrix entries, so a
    coefficient update is a pure value refresh with no structural work.
    """

    def __init__(self, spec: SystemSpec, space: FockSpace):
        self.spec = spec
        self.space = space
        self.a_ops = [mode_annihilator(space, i)
                      for i in range(1, space.num_modes + 1)]
        self.ham = build_system_hamiltonian(spec, space)
        self.coll = collective_operator(spec, space)
        self.coll_dag = self.coll.conj().T.tocsr()
        # population of states with any mode in the top Fock level
        nc, n = space.cutoff, space.num_modes
        levels = np.stack(np.unravel_index(np.arange(space.dim), (nc,) * n))
        self.top_level_mask = (levels == nc - 1).any(axis=0)
        self.total_occupation = levels.sum(axis=0)
        self._build_obar_template()

    def _build_obar_template(self):
        rows, cols, vals, owner = [], [], [], []
        for k, op in enumerate(self.a_ops):
            coo = op.tocoo()
            rows.append(coo.row)
            cols.append(coo.col)
            vals.append(coo.data)
            owner.append(np.full(coo.nnz, k))
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        self._obar_vals = np.concatenate(vals)
        self._obar_owner = np.concatenate(owner)
        tag = sp.csr_matrix(
            (np.arange(1, len(rows) + 1, dtype=float), (rows, cols)),
            shape=(self.space.dim, self.space.dim))
        if tag.nnz != len(rows):   # disjoint sparsity is what makes this valid
            raise AssertionError("annihilator sparsity patterns overlap")
        # order of concatenated entries inside the csr data array
        self._obar_perm = tag.data.astype(np.int64) - 1
        self._obar = sp.csr_matrix(
            (np.zeros(len(rows), complex), tag.indices.copy(),
             tag.indptr.copy()), shape=tag.shape)

    def obar(self, F: np.ndarray) -> sp.csr_matrix:
        scaled = np.asarray(F)[self._obar_owner] * self._obar_vals
        self._obar.data[:] = scaled[self._obar_perm]
        return self._obar

    def drift_parts(self):
        """Fused trajectory drift template: M(F) = -i H - sum_k F_k A^dag a_k.

        Returns (matrix, static_data, per_mode) where ``matrix`` is a csr
        whose values are refreshed in place, ``static_data`` holds the -i H
        contribution on the union sparsity, and ``per_mode[k]`` is
        (positions, values) of A^dag a_k on that union.
        """
        if not hasattr(self, "_drift"):
            n = len(self.a_ops)
            b_ops = []
            for k in range(n):
                b = (self.coll_dag @ self.a_ops[k]).tocsr()
                b.eliminate_zeros()
                b_ops.append(b)
            pattern = abs(self.ham.copy())
            for b in b_ops:
                pattern = pattern + abs(b)
            pattern = pattern.tocsr()
            pattern.sort_indices()
            locator = pattern.copy()
            locator.data = np.arange(locator.nnz, dtype=float)

            def positions(mat):
                coo = mat.tocoo()
                if coo.nnz == 0:
                    return np.empty(0, np.int64), np.empty(0, complex)
                pos = np.asarray(locator[coo.row, coo.col]).ravel()
                return pos.astype(np.int64), coo.data

            static = np.zeros(pattern.nnz, dtype=complex)
            hpos, hdata = positions(self.ham)
            np.add.at(static, hpos, -1j * hdata)
            per_mode = [positions(b) for b in b_ops]
            matrix = sp.csr_matrix(
                (np.zeros(pattern.nnz, complex), pattern.indices.copy(),
                 pattern.indptr.copy()), shape=pattern.shape)
            self._drift = (matrix, static, per_mode)
        return self._drift


class MasterStepper:
    """In-place 4-stage stepper for the density operator.

    Works with a fixed set of buffers: the derivative

        L(rho) = -i (C - C^dag) + (X + X^dag),
        C = H rho,   X = A (rho Obar^dag) - (rho Obar^dag) A,

    is assembled via accumulating sparse kernels and elementwise passes, so
    a step allocates nothing.  Hermiticity of the output is structural:
    every term enters together with its conjugate transpose.
    """

    def __init__(self, ops: ArrayOps, dt: float):
        from scipy.sparse import _sparsetools

        self.ops = ops
        self.dt = dt
        self._matvecs = _sparsetools.csr_matvecs
        d = ops.space.dim
        self.rho = np.zeros((d, d), complex)
        self._k = [np.empty((d, d), complex) for _ in range(4)]
        self._stage = np.empty((d, d), complex)
        self._p = np.empty((d, d), complex)
        self._m = np.empty((d, d), complex)
        self._x = np.empty((d, d), complex)
        self._c = np.empty((d, d), complex)

    def _apply(self, mat, x, out):
        out[:] = 0.0
        self._matvecs(mat.shape[0], mat.shape[1], x.shape[1], mat.indptr,
                      mat.indices, mat.data, x.ravel(), out.ravel())

    def _deriv(self, rho, F, out):
        ops = self.ops
        p, m, x, c = self._p, self._m, self._x, self._c
        obar = ops.obar(F)
        self._apply(obar, rho, p)            # P = Obar rho
        np.conjugate(p.T, out=m)             # M = rho Obar^dag
        self._apply(ops.coll, m, x)          # X = A M
        self._apply(ops.coll_dag, p, m)      # M = A^dag Obar rho = (M A)^dag
        np.conjugate(m.T, out=c)
        x -= c                               # X = [A, rho Obar^dag]
        np.conjugate(x.T, out=out)
        out += x                             # X + X^dag
        self._apply(ops.ham, rho, c)         # C = H rho
        np.conjugate(c.T, out=m)
        c -= m                               # C - C^dag
        c *= -1j
        out += c

    def step(self, F0, Fh, F1):
        dt = self.dt
        rho = self.rho
        k1, k2, k3, k4 = self._k
        stage = self._stage
        self._deriv(rho, F0, k1)
        np.multiply(k1, dt / 2.0, out=stage)
        stage += rho
        self._deriv(stage, Fh, k2)
        np.multiply(k2, dt / 2.0, out=stage)
        stage += rho
        self._deriv(stage, Fh, k3)
        np.multiply(k3, dt, out=stage)
        stage += rho
        self._deriv(stage, F1, k4)
        k1 += k4
        k2 += k3
        k2 *= 2.0
        k1 += k2
        k1 *= dt / 6.0
        rho += k1

    def check_finite(self):
        if not np.isfinite(self.rho).all():
            raise PropagationError("non-finite density matrix entries")


def step_master(rho: np.ndarray, ops: ArrayOps, F0, Fh, F1,
                dt: float) -> np.ndarray:
    """One 4-stage step; F0/Fh/F1 are the coefficient vectors at t, t + dt/2
    and t + dt (interpolate the table for interior stages)."""
    stepper = MasterStepper(ops, dt)
    stepper.rho[:] = rho
    stepper.step(np.asarray(F0), np.asarray(Fh), np.asarray(F1))
    stepper.check_finite()
    return stepper.rho.copy()


@dataclass
class MasterRun:
    """Result of a master-equation propagation.

    Positivity and trace are monitored at the probes, never enforced: the
    equation is exact, so a violation is a visible numerical symptom rather
    than something to project away.
    """

    times: np.ndarray
    rhos: list                     # DensOp at each probe (empty if not stored)
    trace_error: np.ndarray        # |Tr rho - 1| at probes
    hermiticity: np.ndarray        # max |rho - rho^dag| at probes
    min_eigenvalue: np.ndarray     # smallest eigenvalue at probes (NaN if off)
    top_level_population: np.ndarray
    dt: float
    probe_values: list | None = None   # on_probe results, if a callback ran
    convergence: dict | None = None


def run_master(spec: SystemSpec, space: FockSpace, table: CoefficientTable,
               dt: float, t_max: float, probe_times,
               initial: Ket | None = None, alpha: complex = 2.0,
               initial_cavity: int = 1, check_eigenvalues: bool = True,
               store_states: bool = True, on_probe=None,
               rotating_frame: bool | None = None) -> MasterRun:
    """Propagate the density operator and sample it at the probe times.

    The default initial state is a cat of size ``alpha`` in ``initial_cavity``
    with every other cavity in vacuum.  ``on_probe(t, rho)`` lets callers
    extract observables without retaining the full matrix at every probe;
    set ``store_states=False`` for long runs where only those values matter.

    For equal cavity frequencies the integration happens in the co-rotating
    frame by default (exact, removes the fastest oscillations); every probed
    or stored state is rotated back, so all outputs are lab-frame.
    """
    steps = int(round(t_max / dt))
    probe_idx = _as_probe_indices(probe_times, dt, steps)
    omega_rot = _rotating_omega(spec, rotating_frame)
    ops = _frame_ops(spec, space, omega_rot)
    if initial is None:
        initial = cat_state(space, initial_cavity, alpha)
    stepper = MasterStepper(ops, dt)
    np.outer(initial.vec, initial.vec.conj(), out=stepper.rho)

    tgrid = np.arange(steps + 1) * dt
    f_lo = table.at(tgrid[:-1])
    f_half = table.at(tgrid[:-1] + dt / 2.0)
    f_hi = table.at(tgrid[1:])

    want = {k: p for p, k in enumerate(probe_idx)}
    rhos = []
    n_probes = len(probe_idx)
    tr_err = np.zeros(n_probes)
    herm = np.zeros(n_probes)
    mineig = np.full(n_probes, np.nan)
    toppop = np.zeros(n_probes)
    values = [] if on_probe is not None else None

    def record(k, rho):
        p = want[k]
        t = np.trace(rho)
        tr_err[p] = abs(t.real - 1.0) + abs(t.imag)
        herm[p] = float(np.abs(rho - rho.conj().T).max())
        if check_eigenvalues:
            mineig[p] = float(np.linalg.eigvalsh((rho + rho.conj().T) / 2)[0])
        toppop[p] = float(np.real(rho.diagonal()[ops.top_level_mask].sum()))
        if omega_rot is not None:
            # rotate the probe back to the lab frame (exact phase dressing)
            ph = np.exp(-1j * omega_rot * (k * dt) * ops.total_occupation)
            rho = rho * np.outer(ph, ph.conj())
        else:
            rho = rho.copy()
        if store_states:
            rhos.append(DensOp(space, rho))
        if on_probe is not None:
            values.append(on_probe(k * dt, rho))

    if 0 in want:
        record(0, stepper.rho)
    for n in range(steps):
        stepper.step(f_lo[n], f_half[n], f_hi[n])
        if (n + 1) in want:
            stepper.check_finite()
            record(n + 1, stepper.rho)
    stepper.check_finite()

    return MasterRun(times=np.array([k * dt for k in probe_idx]), rhos=rhos,
                     trace_error=tr_err, hermiticity=herm,
                     min_eigenvalue=mineig, top_level_population=toppop,
                     dt=dt, probe_values=values)


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

class BatchStepper:
    """In-place 4-stage stepper for a block of trajectories.

    The drift -i H - A^dag Obar(t) lives in one fixed-sparsity matrix whose
    values are refreshed per stage; the noise term (A psi) z* is accumulated
    through a preallocated buffer.  Everything mutates caller-visible state
    only through :meth:`step`, which advances the block sitting in its
    ``psi`` buffer.
    """

    def __init__(self, ops: ArrayOps, batch: int, dt: float):
        from scipy.sparse import _sparsetools

        self.ops = ops
        self.dt = dt
        self._matvecs = _sparsetools.csr_matvecs
        self.drift, self._static, self._per_mode = ops.drift_parts()
        dim = ops.space.dim
        shape = (dim, batch)
        self.psi = np.zeros(shape, complex)
        self._k = [np.empty(shape, complex) for _ in range(4)]
        self._stage = np.empty(shape, complex)
        self._tmp = np.empty(shape, complex)

    def _refresh(self, F):
        data = self.drift.data
        data[:] = self._static
        for k, (pos, vals) in enumerate(self._per_mode):
            if F[k] != 0.0:
                data[pos] -= F[k] * vals

    def _apply(self, mat, x, out):
        out[:] = 0.0
        self._matvecs(mat.shape[0], mat.shape[1], x.shape[1], mat.indptr,
                      mat.indices, mat.data, x.ravel(), out.ravel())

    def _deriv(self, x, w, out):
        self._apply(self.drift, x, out)
        self._apply(self.ops.coll, x, self._tmp)
        self._tmp *= w
        out += self._tmp

    def step(self, w, F0, Fh, F1):
        """Advance the resident block by one step; ``w`` is the left-endpoint
        noise row, held fixed across the interior stages."""
        dt = self.dt
        psi = self.psi
        k1, k2, k3, k4 = self._k
        stage = self._stage
        self._refresh(F0)
        self._deriv(psi, w, k1)
        np.multiply(k1, dt / 2.0, out=stage)
        stage += psi
        self._refresh(Fh)
        self._deriv(stage, w, k2)
        np.multiply(k2, dt / 2.0, out=stage)
        stage += psi
        self._deriv(stage, w, k3)
        np.multiply(k3, dt, out=stage)
        stage += psi
        self._refresh(F1)
        self._deriv(stage, w, k4)
        k1 += k4
        k2 += k3
        k2 *= 2.0
        k1 += k2
        k1 *= dt / 6.0
        psi += k1

    def check_finite(self):
        if not np.isfinite(self.psi).all():
            raise PropagationError("non-finite trajectory amplitudes")


def step_trajectory(psi: np.ndarray, ops: ArrayOps, F0, Fh, F1, w,
                    dt: float) -> np.ndarray:
    """One 4-stage step of the linear trajectory equation.

    The noise sample ``w`` is the left-endpoint value of z*_t and is held
    fixed across the interior stages; the coefficient vectors follow the
    stage times.  ``psi`` may be a single ket or a (dim, batch) block with
    ``w`` a length-batch row.
    """
    single = np.ndim(psi) == 1
    block = psi[:, None] if single else psi
    wrow = np.atleast_1d(np.asarray(w, dtype=complex))[None, :]
    stepper = BatchStepper(ops, block.shape[1], dt)
    stepper.psi[:] = block
    stepper.step(wrow, np.asarray(F0), np.asarray(Fh), np.asarray(F1))
    if not np.isfinite(stepper.psi).all():
        raise PropagationError("non-finite trajectory amplitudes")
    out = stepper.psi.copy()
    return out[:, 0] if single else out


@dataclass
class TrajectoryRun:
    """Unnormalised kets of a single noise realisation at the probe times."""

    times: np.ndarray
    kets: list
    seed: int | None


def run_trajectory(spec: SystemSpec, space: FockSpace, table: CoefficientTable,
                   noise: NoisePath, t_max: float, probe_times,
                   initial: Ket | None = None, alpha: complex = 2.0,
                   initial_cavity: int = 1,
                   rotating_frame: bool | None = None) -> TrajectoryRun:
    dt = noise.dt
    steps = int(round(t_max / dt))
    if noise.num_steps < steps:
        raise ValueError(
            f"noise path covers {noise.num_steps} steps, need {steps}"
        )
    probe_idx = _as_probe_indices(probe_times, dt, steps)
    omega_rot = _rotating_omega(spec, rotating_frame)
    ops = _frame_ops(spec, space, omega_rot)
    if initial is None:
        initial = cat_state(space, initial_cavity, alpha)

    tgrid = np.arange(steps + 1) * dt
    f_lo = table.at(tgrid[:-1])
    f_half = table.at(tgrid[:-1] + dt / 2.0)
    f_hi = table.at(tgrid[1:])
    drive = np.asarray(noise.values, dtype=complex).copy()
    if omega_rot is not None:
        drive *= np.exp(-1j * omega_rot * tgrid[: len(drive)])

    def lab(k, vec):
        if omega_rot is None:
            return vec.copy()
        ph = np.exp(-1j * omega_rot * (k * dt) * ops.total_occupation)
        return ph * vec

    stepper = BatchStepper(ops, 1, dt)
    stepper.psi[:, 0] = initial.vec
    want = set(probe_idx)
    stored = {}
    if 0 in want:
        stored[0] = lab(0, stepper.psi[:, 0])
    wrow = np.empty((1, 1), complex)
    for n in range(steps):
        wrow[0, 0] = drive[n]
        stepper.step(wrow, f_lo[n], f_half[n], f_hi[n])
        if (n + 1) in want:
            stepper.check_finite()
            stored[n + 1] = lab(n + 1, stepper.psi[:, 0])
    stepper.check_finite()
    times = np.array([k * dt for k in probe_idx])
    kets = [Ket(space, stored[k]) for k in probe_idx]
    return TrajectoryRun(times=times, kets=kets, seed=noise.seed)


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------

def trajectory_seeds(master_seed: int, num: int) -> list:
    """Stable per-trajectory seeds derived from (master seed, index)."""
    return [s.generate_state(4) for s in
            np.random.SeedSequence(master_seed).spawn(num)]


def _ou_batch(lorentz: LorentzSpec, dt: float, steps: int, seeds) -> np.ndarray:
    """Per-seed stationary paths; draw order per trajectory matches
    sample_ou_noise so individual paths are reproducible in isolation."""
    k0 = lorentz.gamma_big * lorentz.gamma / 2.0
    decay = np.exp(-(lorentz.gamma - 1j * lorentz.delta) * dt)
    innov_var = k0 * (1.0 - np.exp(-2.0 * lorentz.gamma * dt))
    m = len(seeds)
    z0 = np.empty(m, dtype=complex)
    xi = np.empty((m, steps), dtype=complex)
    for b, s in enumerate(seeds):
        rng = np.random.default_rng(s)
        z0[b] = _circular_gaussian(rng, 1, k0)[0]
        xi[b] = _circular_gaussian(rng, (1, steps), innov_var)[0]
    z = np.empty((m, steps + 1), dtype=complex)
    z[:, 0] = z0
    for n in range(steps):
        z[:, n + 1] = decay * z[:, n] + xi[:, n]
    return z


def _white_batch(gamma_big: float, dt: float, steps: int, seeds) -> np.ndarray:
    var = gamma_big / dt
    m = len(seeds)
    z = np.empty((m, steps + 1), dtype=complex)
    for b, s in enumerate(seeds):
        rng = np.random.default_rng(s)
        z[b] = _circular_gaussian(rng, (1, steps + 1), var)[0]
    return z


def noise_batch(kernel: EnvKernel, dt: float, steps: int, seeds) -> np.ndarray:
    """Noise block (len(seeds), steps + 1) for any supported kernel kind."""
    if kernel.kind == "ou":
        return _ou_batch(kernel.lorentz, dt, steps, seeds)
    if kernel.kind == "markov-delta":
        return _white_batch(kernel.gamma_big, dt, steps, seeds)
    if kernel.kind == "tabulated":
        from .kernels import sample_noise_from_kernel
        rows = [sample_noise_from_kernel(kernel, dt, steps, seed=s).values
                for s in seeds]
        return np.stack(rows)
    raise ValueError(f"unsupported kernel kind '{kernel.kind}'")


@dataclass
class EnsembleResult:
    """Dyad-averaged state estimate with per-block partial sums.

    rho_hats holds (1/M) sum_m |psi_m><psi_m| at each probe when full dyads
    were accumulated.  reduced_hats[i][p] is the matching single-cavity
    reduced estimate for cavity i+1 at probe p (always available).  Block
    partial sums support delete-one-block jackknife error bars through
    ``jackknife``.
    """

    num_trajectories: int
    times: np.ndarray
    space: FockSpace
    reduced_hats: list                 # [cavity][probe] -> (nc, nc) ndarray
    reduced_blocks: list               # [block][cavity][probe]
    block_sizes: list
    trace_mean: np.ndarray             # mean squared norm at probes
    rho_hats: list | None = None       # [probe] -> DensOp
    rho_blocks: list | None = None     # [block][probe] -> (d, d) ndarray

    def jackknife(self, stat, probe: int, cavity: int | None = None,
                  full: bool = False):
        """Delete-one-block jackknife of a scalar statistic of the averaged
        state.  ``stat`` maps a density-matrix ndarray to a float; it is
        applied to the full estimate and to every leave-one-block-out
        estimate.  Returns (value, standard_error)."""
        if full:
            if self.rho_blocks is None:
                raise ValueError("full dyads were not accumulated per block")
            blocks = [b[probe] for b in self.rho_blocks]
            total = self.rho_hats[probe].mat * self.num_trajectories
        else:
            if cavity is None:
                raise ValueError("cavity index required for reduced jackknife")
            blocks = [b[cavity - 1][probe] for b in self.reduced_blocks]
            total = self.reduced_hats[cavity - 1][probe] * self.num_trajectories
        m = self.num_trajectories
        value = stat(total / m)
        loo = []
        for size, bsum in zip(self.block_sizes, blocks):
            loo.append(stat((total - bsum) / (m - size)))
        loo = np.asarray(loo)
        g = len(loo)
        se = np.sqrt((g - 1) / g * np.sum((loo - loo.mean()) ** 2))
        return value, float(se)


def _propagate_block(payload):
    """One batch of trajectories -> (reduced sums, full sums, trace sums).

    Module-level so worker processes can run blocks; the reduction order in
    run_ensemble is fixed by block index, which keeps results independent of
    the worker count.
    """
    (spec, space, table, kernel, dt, steps, probe_idx, initial_vec, chunk,
     store_full, omega_rot) = payload
    ops = _frame_ops(spec, space, omega_rot)
    tgrid = np.arange(steps + 1) * dt
    f_lo = table.at(tgrid[:-1])
    f_half = table.at(tgrid[:-1] + dt / 2.0)
    f_hi = table.at(tgrid[1:])
    n = space.num_modes
    nc = space.cutoff
    n_probes = len(probe_idx)
    want = {k: p for p, k in enumerate(probe_idx)}
    b = len(chunk)

    noise = noise_batch(kernel, dt, steps, chunk)
    if omega_rot is not None:
        noise = noise * np.exp(-1j * omega_rot * tgrid[: noise.shape[1]])[None, :]
        probe_phases = {k: np.exp(-1j * omega_rot * (k * dt)
                                  * ops.total_occupation)
                        for k in probe_idx}
    stepper = BatchStepper(ops, b, dt)
    stepper.psi[:] = initial_vec[:, None]
    red_b = [[np.zeros((nc, nc), complex) for _ in range(n_probes)]
             for _ in range(n)]
    full_b = [np.zeros((space.dim, space.dim), complex)
              for _ in range(n_probes)] if store_full else None
    trace_b = np.zeros(n_probes)

    letters = "abcdefgh"[:n]
    red_sigs = []
    for i in range(n):
        other = letters.replace(letters[i], "z")
        red_sigs.append(f"{letters}m,{other}m->{letters[i]}z")

    def record(k, psi):
        p = want[k]
        if omega_rot is not None:
            psi = probe_phases[k][:, None] * psi
        blk = psi.reshape((nc,) * n + (b,))
        for i in range(n):
            red_b[i][p] += np.einsum(red_sigs[i], blk, blk.conj())
        if store_full:
            full_b[p] += psi @ psi.conj().T
        trace_b[p] += float(np.sum(np.abs(psi) ** 2))

    if 0 in want:
        record(0, stepper.psi)
    for step in range(steps):
        stepper.step(noise[:, step][None, :], f_lo[step], f_half[step],
                     f_hi[step])
        if (step + 1) in want:
            stepper.check_finite()
            record(step + 1, stepper.psi)
    stepper.check_finite()
    return red_b, full_b, trace_b


def run_ensemble(spec: SystemSpec, space: FockSpace, table: CoefficientTable,
                 kernel: EnvKernel, dt: float, t_max: float, probe_times,
                 num_trajectories: int, seed: int = 0,
                 initial: Ket | None = None, alpha: complex = 2.0,
                 initial_cavity: int = 1, batch_size: int = 256,
                 store_full: bool | None = None,
                 rotating_frame: bool | None = None,
                 workers: int = 1) -> EnsembleResult:
    """Average ``num_trajectories`` linear-trajectory dyads at the probes.

    Trajectories are propagated in vectorised batches; each batch forms one
    jackknife block and one unit of worker parallelism.  Per-trajectory
    seeds plus a fixed-order final reduction make the result identical for
    any worker count.  ``store_full`` keeps full-space dyad sums per block
    (defaults to True for one or two cavities, False above that where the
    density matrix is the object the trajectory route exists to avoid).
    Equal-frequency systems integrate in the co-rotating frame (the noise
    picks up the matching phase) and probes are rotated back to the lab.
    """
    if num_trajectories < 1:
        raise ValueError("need at least one trajectory")
    steps = int(round(t_max / dt))
    probe_idx = _as_probe_indices(probe_times, dt, steps)
    omega_rot = _rotating_omega(spec, rotating_frame)
    if initial is None:
        initial = cat_state(space, initial_cavity, alpha)
    if store_full is None:
        store_full = space.num_modes <= 2

    seeds = trajectory_seeds(seed, num_trajectories)
    n = space.num_modes
    nc = space.cutoff
    n_probes = len(probe_idx)

    payloads = []
    for start in range(0, num_trajectories, batch_size):
        chunk = seeds[start:start + batch_size]
        payloads.append((spec, space, table, kernel, dt, steps, probe_idx,
                         initial.vec, chunk, store_full, omega_rot))

    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            block_results = list(pool.map(_propagate_block, payloads))
    else:
        block_results = [_propagate_block(p) for p in payloads]

    red_total = [[np.zeros((nc, nc), complex) for _ in range(n_probes)]
                 for _ in range(n)]
    full_total = [np.zeros((space.dim, space.dim), complex)
                  for _ in range(n_probes)] if store_full else None
    red_blocks, full_blocks, block_sizes = [], [], []
    trace_sum = np.zeros(n_probes)
    for payload, (red_b, full_b, trace_b) in zip(payloads, block_results):
        red_blocks.append(red_b)
        block_sizes.append(len(payload[8]))
        trace_sum += trace_b
        for i in range(n):
            for p in range(n_probes):
                red_total[i][p] += red_b[i][p]
        if store_full:
            full_blocks.append(full_b)
            for p in range(n_probes):
                full_total[p] += full_b[p]

    m = float(num_trajectories)
    reduced_hats = [[r / m for r in per_cav] for per_cav in red_total]
    rho_hats = None
    if store_full:
        rho_hats = [DensOp(space, r / m) for r in full_total]
    return EnsembleResult(
        num_trajectories=num_trajectories,
        times=np.array([k * dt for k in probe_idx]),
        space=space,
        reduced_hats=reduced_hats,
        reduced_blocks=red_blocks,
        block_sizes=block_sizes,
        trace_mean=trace_sum / m,
        rho_hats=rho_hats,
        rho_blocks=full_blocks if store_full else None,
    )


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    """(1/2) ||a - b||_1 for Hermitian matrices."""
    d = a - b
    d = (d + d.conj().T) / 2.0
    return 0.5 * float(np.abs(np.linalg.eigvalsh(d)).sum())
