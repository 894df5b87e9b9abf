"""Cat-state transfer in a lossy coupled-cavity array with a common
memory-carrying environment: coefficient solvers, master-equation and
stochastic-trajectory propagation, and phase-space observables."""

__version__ = "0.1.0"

from .fock import (
    CutoffError,
    DensOp,
    FockSpace,
    Ket,
    ModeIndexError,
    SystemSpec,
    build_system_hamiltonian,
    cat_state,
    coherent_state,
    collective_operator,
    expectation,
    mode_annihilator,
    partial_trace,
    vacuum_state,
    weights_from_eta,
)
from .kernels import (
    EnvKernel,
    LorentzSpec,
    NoisePath,
    QuadratureConfig,
    ThermalKernelPair,
    markovian_kernel,
    ou_kernel,
    sample_noise_from_kernel,
    sample_ou_noise,
    tabulated_kernel,
    thermal_kernels,
)
from .coeffs import (
    CoefficientTable,
    HistoryGrid,
    SolverBlowupError,
    ThermalCoeffGrids,
    effective_coupling_ratio,
    markov_coefficients,
    solve_F_ou_fast,
    solve_f_history,
    solve_thermal_coeffs,
)
from .dynamics import (
    EnsembleResult,
    MasterRun,
    TrajectoryRun,
    run_ensemble,
    run_master,
    run_trajectory,
    step_master,
    step_trajectory,
    trace_distance,
)
from .observables import (
    FidelityCurve,
    WignerGrid,
    fidelity_curve,
    mean_photon,
    negativity_volume,
    transfer_fidelity,
    wigner_grid,
)
