"""Environment correlation kernels and colored-noise sampling.

The environment enters the dynamics only through its two-time correlation
function K(t, s).  Stationary kernels are represented by their lag profile
K(u), u = t - s >= 0, with K(t, s) = conj(K(s, t)) supplying the other half.
Supported kinds:

  ou         closed form (Gamma gamma / 2) exp(-(gamma + i Delta) u) from a
             Lorentzian spectral density,
  markov     delta-correlated sentinel; never sampled or quadratured, solvers
             treat it analytically,
  tabulated  linear interpolation of a sampled lag profile.

Finite-temperature environments map onto a pair of zero-temperature kernels
(K1, K2) built by quadrature over the spectral density weighted with
Bose-Einstein occupations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class KernelError(ValueError):
    pass


class QuadratureError(RuntimeError):
    """Thermal-kernel quadrature failed to converge."""


class NonEmbeddableKernelError(ValueError):
    """Tabulated covariance has materially negative spectral mass."""


@dataclass(frozen=True)
class LorentzSpec:
    """Lorentzian spectral density parameters.

    gamma_big -- global dissipation rate Gamma > 0,
    gamma     -- spectral width; the memory time is tau = 1/gamma,
    delta     -- central frequency of the environment.
    """

    gamma_big: float
    gamma: float
    delta: float = 0.0

    def __post_init__(self):
        if self.gamma_big <= 0:
            raise KernelError(f"Gamma must be positive, got {self.gamma_big}")
        if self.gamma <= 0:
            raise KernelError(f"gamma must be positive, got {self.gamma}")

    @property
    def tau(self) -> float:
        return 1.0 / self.gamma

    @classmethod
    def from_tau(cls, gamma_big: float, tau: float, delta: float = 0.0):
        if tau <= 0:
            raise KernelError(f"tau must be positive, got {tau}")
        return cls(gamma_big, 1.0 / tau, delta)

    def spectral_density(self, omega) -> np.ndarray:
        """g(w) = (Gamma gamma^2 / 2 pi) / ((w - Delta)^2 + gamma^2)."""
        omega = np.asarray(omega, dtype=float)
        return (self.gamma_big * self.gamma**2 / (2.0 * np.pi)) / (
            (omega - self.delta) ** 2 + self.gamma**2
        )


@dataclass(frozen=True)
class EnvKernel:
    """Stationary correlation kernel K(u) for u >= 0.

    ``kind`` is one of 'ou', 'markov-delta', 'tabulated'.  The delta kernel
    has no pointwise evaluator; solvers must special-case it.
    """

    kind: str
    lorentz: LorentzSpec | None = None
    gamma_big: float = 0.0
    table_u: np.ndarray | None = None
    table_k: np.ndarray | None = None

    @property
    def is_delta(self) -> bool:
        return self.kind == "markov-delta"

    def __call__(self, u) -> np.ndarray:
        """K(u) for lags u >= 0 (scalar or array)."""
        if self.kind == "ou":
            s = self.lorentz
            u = np.asarray(u, dtype=float)
            return (s.gamma_big * s.gamma / 2.0) * np.exp(
                -(s.gamma + 1j * s.delta) * u
            )
        if self.kind == "tabulated":
            u = np.asarray(u, dtype=float)
            re = np.interp(u, self.table_u, self.table_k.real)
            im = np.interp(u, self.table_u, self.table_k.imag)
            return re + 1j * im
        raise KernelError(f"kernel kind '{self.kind}' has no pointwise value")

    def two_time(self, t, s) -> np.ndarray:
        """K(t, s) with Hermitian symmetry K(t, s) = conj(K(s, t))."""
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        u = t - s
        k = self(np.abs(u))
        return np.where(u >= 0, k, np.conj(k))


def ou_kernel(spec: LorentzSpec) -> EnvKernel:
    """Exponential kernel K(u) = (Gamma gamma / 2) e^{-(gamma + i Delta) u}."""
    return EnvKernel(kind="ou", lorentz=spec)


def markovian_kernel(gamma_big: float) -> EnvKernel:
    """Delta-correlated sentinel.

    Downstream solvers must treat it analytically (constant coefficients
    Gamma/2); quadrature of a delta function is ill-posed and is refused.
    Gamma = 0 is allowed and describes a fully decoupled environment.
    """
    if gamma_big < 0:
        raise KernelError(f"Gamma must be nonnegative, got {gamma_big}")
    return EnvKernel(kind="markov-delta", gamma_big=gamma_big)


def tabulated_kernel(u: np.ndarray, k: np.ndarray) -> EnvKernel:
    u = np.asarray(u, dtype=float)
    k = np.asarray(k, dtype=complex)
    if u.ndim != 1 or u.shape != k.shape:
        raise KernelError("lag grid and values must be matching 1-d arrays")
    if u[0] != 0.0 or np.any(np.diff(u) <= 0):
        raise KernelError("lag grid must start at 0 and increase")
    if abs(k[0].imag) > 1e-12 * max(1.0, abs(k[0])) or k[0].real < 0:
        raise KernelError(f"K(0) must be real and nonnegative, got {k[0]}")
    return EnvKernel(kind="tabulated", table_u=u, table_k=k)


# ---------------------------------------------------------------------------
# thermal kernels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureConfig:
    """Frequency quadrature for thermal kernels.

    The grid spans [omega_min, omega_max]; omega_max defaults to
    Delta + 20 gamma (Lorentzian support), omega_min to
    max(1e-6, initial grid spacing) which keeps the Bose-Einstein pole at
    omega = 0 out of the integrand.  The trapezoid refines (doubling the
    point count) until successive kernel tables differ by less than rtol
    relative to K1(0), or max_refinements is exhausted.
    """

    omega_max: float | None = None
    omega_min: float | None = None
    initial_points: int = 2000
    rtol: float = 1e-8
    max_refinements: int = 12


@dataclass(frozen=True)
class ThermalKernelPair:
    """Tabulated correlation kernels (K1, K2) of the two effective
    zero-temperature environments representing a thermal bath at inverse
    temperature beta."""

    beta: float
    u: np.ndarray
    k1_table: np.ndarray
    k2_table: np.ndarray
    omega_min: float
    omega_max: float
    points: int

    def k1(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return np.interp(u, self.u, self.k1_table.real) + 1j * np.interp(
            u, self.u, self.k1_table.imag
        )

    def k2(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return np.interp(u, self.u, self.k2_table.real) + 1j * np.interp(
            u, self.u, self.k2_table.imag
        )

    def k1_kernel(self) -> EnvKernel:
        return tabulated_kernel(self.u, self.k1_table)


def bose_occupation(omega, beta: float) -> np.ndarray:
    """Mean occupation 1/(e^{beta w} - 1); zero where beta w overflows."""
    x = beta * np.asarray(omega, dtype=float)
    out = np.zeros_like(x)
    small = x < 700.0
    out[small] = 1.0 / np.expm1(x[small])
    return out


def _thermal_tables(spec, beta, u, w):
    g = spec.spectral_density(w)
    nb = bose_occupation(w, beta)
    phase = np.exp(-1j * np.outer(u, w))          # (n_u, n_w)
    k1 = np.trapezoid(g * (nb + 1.0) * phase, w, axis=1)
    k2 = np.trapezoid(g * nb * np.conj(phase), w, axis=1)
    return k1, k2


def thermal_kernels(spec: LorentzSpec, beta: float, u_grid: np.ndarray,
                    quad: QuadratureConfig = QuadratureConfig()) -> ThermalKernelPair:
    """Build K1(u) = int g(w)(n + 1) e^{-iwu} dw and
    K2(u) = int g(w) n e^{+iwu} dw on the requested lag grid.

    n(w) is the Bose-Einstein occupation 1/(e^{beta w} - 1); occupation must
    be positive, so the exponent carries +beta w.
    """
    if beta <= 0:
        raise KernelError(f"beta must be positive, got {beta}")
    u = np.asarray(u_grid, dtype=float)
    if u.ndim != 1 or u[0] != 0.0 or np.any(np.diff(u) <= 0):
        raise KernelError("lag grid must start at 0 and increase")

    omega_max = quad.omega_max
    if omega_max is None:
        omega_max = spec.delta + 20.0 * spec.gamma
    if omega_max < spec.delta + 20.0 * spec.gamma:
        raise KernelError(
            f"quadrature cutoff {omega_max} below Lorentzian support "
            f"{spec.delta + 20.0 * spec.gamma}"
        )
    n = quad.initial_points
    omega_min = quad.omega_min
    if omega_min is None:
        omega_min = max(1e-6, omega_max / n)

    w = np.linspace(omega_min, omega_max, n)
    k1, k2 = _thermal_tables(spec, beta, u, w)
    scale = max(abs(k1[0]), 1e-300)
    for _ in range(quad.max_refinements):
        n *= 2
        w = np.linspace(omega_min, omega_max, n)
        k1_new, k2_new = _thermal_tables(spec, beta, u, w)
        err = max(np.abs(k1_new - k1).max(), np.abs(k2_new - k2).max())
        k1, k2 = k1_new, k2_new
        if err <= quad.rtol * scale:
            return ThermalKernelPair(
                beta=beta, u=u, k1_table=k1, k2_table=k2,
                omega_min=omega_min, omega_max=omega_max, points=n,
            )
    raise QuadratureError(
        f"thermal quadrature did not reach rtol={quad.rtol} after "
        f"{quad.max_refinements} refinements (last error {err:.3e})"
    )


# ---------------------------------------------------------------------------
# noise sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoisePath:
    """Complex Gaussian driving samples z*_t on a uniform grid."""

    dt: float
    values: np.ndarray
    seed: int | None = None

    @property
    def num_steps(self) -> int:
        return len(self.values) - 1

    @classmethod
    def zero(cls, dt: float, num_steps: int) -> "NoisePath":
        return cls(dt=dt, values=np.zeros(num_steps + 1, dtype=complex))


def _circular_gaussian(rng, shape, variance):
    s = np.sqrt(variance / 2.0)
    return s * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def sample_ou_noise(spec: LorentzSpec, dt: float, num_steps: int,
                    seed=None, size: int | None = None):
    """Stationary driving path(s) z*_t for the trajectory equation.

    The samples are the conjugate-side process: their statistics are
    E[z*_t conj(z*_s)] = conj(K(t - s)) for t >= s and E[z* z*] = 0, the
    unique circular Gaussian law under which the dyad average of the linear
    trajectories reproduces the master equation (the kernel itself governs
    E[z_t z*_s]).  Exact discrete autoregression: decay e^{-(gamma - i
    Delta) dt} per step, innovation variance
    (Gamma gamma / 2)(1 - e^{-2 gamma dt}), initial variance Gamma gamma / 2.
    With ``size`` set, returns an array of shape (size, num_steps + 1) of
    independent paths; otherwise one NoisePath.
    """
    if dt <= 0:
        raise KernelError(f"dt must be positive, got {dt}")
    rng = np.random.default_rng(seed)
    m = 1 if size is None else size
    k0 = spec.gamma_big * spec.gamma / 2.0
    decay = np.exp(-(spec.gamma - 1j * spec.delta) * dt)
    innov_var = k0 * (1.0 - np.exp(-2.0 * spec.gamma * dt))
    z = np.empty((m, num_steps + 1), dtype=complex)
    z[:, 0] = _circular_gaussian(rng, m, k0)
    xi = _circular_gaussian(rng, (m, num_steps), innov_var)
    for n in range(num_steps):
        z[:, n + 1] = decay * z[:, n] + xi[:, n]
    if size is None:
        return NoisePath(dt=dt, values=z[0], seed=seed)
    return z


def sample_white_noise(gamma_big: float, dt: float, num_steps: int,
                       seed=None, size: int | None = None):
    """Discrete delta-correlated noise, E[z*_n z_m] = (Gamma/dt) delta_nm.

    Used for trajectories driven by the markov-delta kernel; Gamma = 0 gives
    the zero path of the decoupled limit.
    """
    rng = np.random.default_rng(seed)
    m = 1 if size is None else size
    z = _circular_gaussian(rng, (m, num_steps + 1), gamma_big / dt if gamma_big else 0.0)
    if size is None:
        return NoisePath(dt=dt, values=z[0], seed=seed)
    return z


def sample_noise_from_kernel(kernel: EnvKernel, dt: float, num_steps: int,
                             seed=None, size: int | None = None,
                             neg_tol: float = 0.05):
    """Driving path(s) z*_t for an arbitrary stationary kernel via circulant
    embedding.

    As with sample_ou_noise, the generated samples follow the conjugate-side
    law E[z*_t conj(z*_s)] = conj(K(t - s)), t >= s.  The covariance sequence
    is embedded in a Hermitian circulant whose FFT eigenvalues form the
    sampling spectrum.  A kernel that has not decayed by the end of the
    table always leaves a little negative mass in that spectrum; mass below
    ``neg_tol`` of the total is clipped (distorting the covariance by at
    most that fraction), anything larger means the covariance is materially
    non-embeddable on this grid and the call fails, naming the offending
    fraction, rather than silently distorting the statistics.
    """
    if kernel.is_delta:
        raise KernelError("delta kernel is handled analytically, not sampled")
    if dt <= 0:
        raise KernelError(f"dt must be positive, got {dt}")
    n = num_steps + 1
    c = np.conj(np.asarray(kernel(np.arange(n) * dt), dtype=complex))
    # odd-length embedding: row[ext - j] = conj(row[j]) holds for every j,
    # so the circulant is exactly Hermitian and its FFT eigenvalues are real
    ext = 2 * n - 1
    row = np.empty(ext, dtype=complex)
    row[:n] = c
    if n > 1:
        row[n:] = np.conj(c[:0:-1])
    lam = np.fft.fft(row).real
    total = np.abs(lam).sum()
    neg = -lam[lam < 0].sum()
    if total > 0 and neg > neg_tol * total:
        raise NonEmbeddableKernelError(
            f"covariance not embeddable: negative spectral mass fraction "
            f"{neg / total:.3e} exceeds {neg_tol:.1e}"
        )
    lam = np.clip(lam, 0.0, None)
    rng = np.random.default_rng(seed)
    m = 1 if size is None else size
    xi = _circular_gaussian(rng, (m, ext), 1.0)
    paths = np.fft.ifft(np.sqrt(lam) * xi, axis=1) * np.sqrt(ext)
    z = paths[:, :n]
    if size is None:
        return NoisePath(dt=dt, values=z[0], seed=seed)
    return z
