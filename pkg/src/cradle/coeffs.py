"""Solvers for the memory-coupling coefficients F_i(t).

The environment acts on the array through time-dependent coefficients

    F_i(t) = int_0^t K(t, s) f_i(t, s) ds,

where the two-time functions f_i obey, column by column in s,

    d/dt f_i(t, s) = i Omega_i f_i + i (lambda_i f_{i+1} + lambda_{i-1} f_{i-1})
                     + (sum_j l_j f_j(t, s)) * F_i(t),      f_i(s, s) = l_i.

With unit weights the columns start at 1 and the weighted sum reduces to the
plain sum; general weights keep the construction exact for asymmetric
environment couplings (the weights are absorbed, so downstream propagators use
F_i as-is: Obar(t) = sum_i F_i(t) a_i).

Re F_i acts as dissipation; Im F_i is an environment-induced effective
coupling between cavities.  A delta-correlated kernel gives the constant
F_i = Gamma l_i / 2 analytically.  For the exponential kernel the convolution
closes into the ODE system

    dF_i/dt = (Gamma gamma / 2) l_i + (i Omega_i - gamma - i Delta) F_i
              + i (lambda_i F_{i+1} + lambda_{i-1} F_{i-1})
              + F_i * sum_j l_j F_j,        F_i(0) = 0,

integrated here with a classical 4-stage fixed-step scheme.  This closure is
a derived shortcut and is only trusted after cross-validation against the
history-grid solver (see the acceptance suite).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fock import SystemSpec
from .kernels import EnvKernel, LorentzSpec, ThermalKernelPair

BLOWUP_GUARD = 1e12


class SolverBlowupError(RuntimeError):
    """Coefficient magnitude exceeded the overflow guard."""

    def __init__(self, step: int, t: float, peak: float):
        self.step = step
        self.t = t
        super().__init__(
            f"coefficient blow-up at step {step} (t = {t:.6g}): |f| = {peak:.3e}"
        )


class MemoryCapError(MemoryError):
    """Three-time grid allocation would exceed the configured cap."""


@dataclass(frozen=True)
class CoefficientTable:
    """Time series of the coefficients F_i(t) on a uniform grid."""

    dt: float
    F: np.ndarray            # (steps + 1, N) complex
    provenance: str          # history-grid | ou-fast | markov-analytic | thermal

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.F.shape[0]) * self.dt

    @property
    def num_modes(self) -> int:
        return self.F.shape[1]

    @property
    def t_max(self) -> float:
        return (self.F.shape[0] - 1) * self.dt

    def at(self, t) -> np.ndarray:
        """Linear interpolation of every column at time(s) t."""
        t = np.asarray(t, dtype=float)
        idx = np.clip(t / self.dt, 0.0, self.F.shape[0] - 1)
        lo = np.floor(idx).astype(int)
        hi = np.minimum(lo + 1, self.F.shape[0] - 1)
        w = (idx - lo)[..., None]
        return (1.0 - w) * self.F[lo] + w * self.F[hi]


@dataclass
class HistoryGrid:
    """Final-time snapshot of the two-time functions f_i(t, s_m)."""

    dt: float
    columns: np.ndarray      # (N, steps + 1): column m holds f_i(t_max, s_m)
    step: int


def _steps_for(dt: float, t_max: float) -> int:
    if dt <= 0 or t_max <= 0:
        raise ValueError(f"need positive dt and t_max, got dt={dt}, t_max={t_max}")
    steps = int(round(t_max / dt))
    if abs(steps * dt - t_max) > 1e-9 * max(1.0, t_max):
        raise ValueError(f"t_max={t_max} is not an integer multiple of dt={dt}")
    return steps


def _guard(arr: np.ndarray, step: int, dt: float) -> None:
    peak = np.abs(arr).max()
    if not np.isfinite(peak) or peak > BLOWUP_GUARD:
        raise SolverBlowupError(step, step * dt, peak)


def solve_f_history(spec: SystemSpec, kernel: EnvKernel, dt: float,
                    t_max: float, return_history: bool = False):
    """Integrate the two-time system on the growing history grid.

    Heun predictor/corrector per column with the convolutions F_i recomputed
    at the corrector stage; trapezoidal quadrature in s.  Works for any
    pointwise-evaluable stationary kernel.  Cost is O(steps^2), memory
    O(steps * N).
    """
    if kernel.is_delta:
        raise ValueError(
            "delta kernel has no history integral; use markov_coefficients"
        )
    steps = _steps_for(dt, t_max)
    om = np.asarray(spec.omegas)
    lam = np.asarray(spec.lambdas)
    l = np.asarray(spec.weights)
    n_modes = spec.num_cavities

    ku = np.asarray(kernel(np.arange(steps + 1) * dt), dtype=complex)
    f = np.zeros((n_modes, steps + 1), dtype=complex)
    f[:, 0] = l
    F_out = np.zeros((steps + 1, n_modes), dtype=complex)

    def convolve(cols: np.ndarray, n: int) -> np.ndarray:
        # trapezoid over s_0..s_n of K(t_n - s_m) f_i(t_n, s_m)
        if n == 0:
            return np.zeros(n_modes, dtype=complex)
        w = np.ones(n + 1)
        w[0] = w[-1] = 0.5
        return (cols[:, : n + 1] * (w * ku[n::-1])).sum(axis=1) * dt

    def rhs(cols: np.ndarray, F_now: np.ndarray) -> np.ndarray:
        s_sum = (l[:, None] * cols).sum(axis=0)
        d = 1j * om[:, None] * cols + F_now[:, None] * s_sum[None, :]
        if n_modes > 1:
            d[:-1] += 1j * lam[:-1, None] * cols[1:]
            d[1:] += 1j * lam[:-1, None] * cols[:-1]
        return d

    for n in range(steps):
        F_n = convolve(f, n)
        F_out[n] = F_n
        cur = f[:, : n + 1]
        d1 = rhs(cur, F_n)
        pred = f.copy()
        pred[:, : n + 1] = cur + dt * d1
        pred[:, n + 1] = l
        F_pred = convolve(pred, n + 1)
        d2 = rhs(pred[:, : n + 1], F_pred)
        f[:, : n + 1] = cur + (dt / 2.0) * (d1 + d2)
        f[:, n + 1] = l
        _guard(f[:, : n + 2], n + 1, dt)
    F_out[steps] = convolve(f, steps)

    table = CoefficientTable(dt=dt, F=F_out, provenance="history-grid")
    if return_history:
        return table, HistoryGrid(dt=dt, columns=f, step=steps)
    return table


def solve_F_ou_fast(spec: SystemSpec, lorentz: LorentzSpec, dt: float,
                    t_max: float) -> CoefficientTable:
    """Closed ODE system for the exponential kernel, 4-stage fixed step."""
    steps = _steps_for(dt, t_max)
    om = np.asarray(spec.omegas)
    lam = np.asarray(spec.lambdas)
    l = np.asarray(spec.weights)
    n_modes = spec.num_cavities
    drive = (lorentz.gamma_big * lorentz.gamma / 2.0) * l
    lin = 1j * om - lorentz.gamma - 1j * lorentz.delta

    def rhs(F: np.ndarray) -> np.ndarray:
        d = drive + lin * F + F * np.sum(l * F)
        if n_modes > 1:
            d[:-1] += 1j * lam[:-1] * F[1:]
            d[1:] += 1j * lam[:-1] * F[:-1]
        return d

    F = np.zeros(n_modes, dtype=complex)
    out = np.zeros((steps + 1, n_modes), dtype=complex)
    for n in range(steps):
        k1 = rhs(F)
        k2 = rhs(F + (dt / 2.0) * k1)
        k3 = rhs(F + (dt / 2.0) * k2)
        k4 = rhs(F + dt * k3)
        F = F + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _guard(F, n + 1, dt)
        out[n + 1] = F
    return CoefficientTable(dt=dt, F=out, provenance="ou-fast")


def markov_coefficients(spec: SystemSpec, gamma_big: float, dt: float,
                        t_max: float) -> CoefficientTable:
    """Constant table F_i = Gamma l_i / 2 of the delta-kernel limit."""
    steps = _steps_for(dt, t_max)
    l = np.asarray(spec.weights)
    F = np.tile(gamma_big * l / 2.0 + 0.0j, (steps + 1, 1))
    return CoefficientTable(dt=dt, F=F, provenance="markov-analytic")


@dataclass(frozen=True)
class TailEstimate:
    """Long-time coefficient summary from the tail of a table."""

    re: np.ndarray          # per-mode tail mean of Re F
    im: np.ndarray          # per-mode tail mean of Im F
    ratio: np.ndarray       # |Im| / Re, the coupling-to-dissipation ratio
    drift: float            # worst relative half-window drift
    stationary: bool


def effective_coupling_ratio(table: CoefficientTable,
                             window: float = 0.2,
                             drift_tol: float = 0.01) -> TailEstimate:
    """Tail-averaged (Re F, Im F) and the dominance ratio |Im F| / Re F.

    The tail window is the final ``window`` fraction of the run, averaged
    arithmetically.  A drift diagnostic compares the two halves of the
    window; relative drift above ``drift_tol`` flags the estimate as
    non-stationary instead of raising.
    """
    if not 0.0 < window <= 1.0:
        raise ValueError(f"window must be in (0, 1], got {window}")
    n_rows = table.F.shape[0]
    start = min(n_rows - 2, int(np.floor(n_rows * (1.0 - window))))
    tail = table.F[start:]
    half = len(tail) // 2
    m1 = tail[:half].mean(axis=0)
    m2 = tail[half:].mean(axis=0)
    mean = tail.mean(axis=0)
    scale = max(np.abs(mean).max(), 1e-300)
    drift = float(np.abs(m2 - m1).max() / scale)
    re = mean.real.copy()
    im = mean.imag.copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(re != 0.0, np.abs(im) / re, np.inf)
        ratio = np.where((re == 0.0) & (im == 0.0), 0.0, ratio)
    return TailEstimate(re=re, im=im, ratio=ratio, drift=drift,
                        stationary=drift < drift_tol)


# ---------------------------------------------------------------------------
# finite-temperature coefficient system
# ---------------------------------------------------------------------------

@dataclass
class ThermalCoeffGrids:
    """Grids and convolutions of the finite-temperature coefficient system.

    Two-time families x_i(t, s), y_i(t, s) and the scalar three-time pair
    x'(t, s, s'), y'(t, s, s') with their kernel convolutions

        X_i(t)      = int_0^t K1(t, s) x_i(t, s) ds
        Y_i(t)      = int_0^t K2(t, s) y_i(t, s) ds
        X'(t, s')   = int_0^t K1(t, s) x'(t, s, s') ds
        Y'(t, s')   = int_0^t K2(t, s) y'(t, s, s') ds.

    Array layout: x[n, m, i] = x_i(t_n, s_m), xp[n, m, k] = x'(t_n, s_m, s'_k),
    zero outside m, k <= n.  At K2 = 0 the x-family decouples from the
    y/primed sector and reproduces the zero-temperature history solution.
    """

    dt: float
    x: np.ndarray            # (T+1, T+1, N)
    y: np.ndarray            # (T+1, T+1, N)
    xp: np.ndarray           # (T+1, T+1, T+1)
    yp: np.ndarray           # (T+1, T+1, T+1)
    X: np.ndarray            # (T+1, N)
    Y: np.ndarray            # (T+1, N)
    Xp: np.ndarray           # (T+1, T+1)  X'(t_n, s'_k)
    Yp: np.ndarray           # (T+1, T+1)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.x.shape[0]) * self.dt


def solve_thermal_coeffs(spec: SystemSpec, kernels: ThermalKernelPair,
                         dt: float, t_max: float,
                         step_cap: int = 160) -> ThermalCoeffGrids:
    """Integrate the coupled thermal coefficient families.

        d/dt x_i = +i Omega_i x_i + i (lambda couplings)
                   + (sum_j l_j x_j) X_i + l_i sum_j Y_j x_j - l_i Y'(t, s)
        d/dt y_i = -i Omega_i y_i - i (lambda couplings)
                   - l_i sum_j X_j y_j - (sum_j l_j y_j) Y_i - l_i X'(t, s)
        d/dt x'(t, s, s') = +(sum_j l_j x_j(t, s)) X'(t, s')
        d/dt y'(t, s, s') = -(sum_j l_j y_j(t, s)) Y'(t, s')

    Boundary rows hold exactly at every appended column:
    x_i(t, t) = y_i(t, t) = l_i, x'(t, t, s') = y'(t, t, s') = 0,
    x'(t, s, t) = -sum_j l_j x_j(t, s), y'(t, s, t) = +sum_j l_j y_j(t, s).
    The corner s = s' = t keeps the column-birth value 0; its quadrature
    weight is O(dt^2) so the convention is inconsequential.

    Heun predictor/corrector, trapezoidal convolutions recomputed at the
    corrector stage.  The three-time grids are stored densely over all of
    (t, s, s'), which is why the step count is capped.
    """
    steps = _steps_for(dt, t_max)
    if steps > step_cap:
        need = 2 * (steps + 1) ** 3 * 16
        raise MemoryCapError(
            f"{steps} steps exceed the cap {step_cap}; the two three-time "
            f"grids would need {need / 1e6:.0f} MB. Raise step_cap explicitly "
            f"if that is intended."
        )
    om = np.asarray(spec.omegas)
    lam = np.asarray(spec.lambdas)
    l = np.asarray(spec.weights)
    n_modes = spec.num_cavities
    T = steps + 1

    k1u = np.asarray(kernels.k1(np.arange(T) * dt), dtype=complex)
    k2u = np.asarray(kernels.k2(np.arange(T) * dt), dtype=complex)

    x = np.zeros((T, T, n_modes), dtype=complex)
    y = np.zeros((T, T, n_modes), dtype=complex)
    xp = np.zeros((T, T, T), dtype=complex)
    yp = np.zeros((T, T, T), dtype=complex)
    Xc = np.zeros((T, n_modes), dtype=complex)
    Yc = np.zeros((T, n_modes), dtype=complex)
    Xpc = np.zeros((T, T), dtype=complex)
    Ypc = np.zeros((T, T), dtype=complex)

    x[0, 0] = l
    y[0, 0] = l
    # xp[0, 0, 0] = yp[0, 0, 0] = 0: column birth wins at the corner

    def trapz_weights(n: int) -> np.ndarray:
        w = np.ones(n + 1)
        if n > 0:
            w[0] = w[-1] = 0.5
        return w

    def convs(xa, ya, xpa, ypa, n):
        """Convolutions at time index n over columns m = 0..n."""
        if n == 0:
            zN = np.zeros(n_modes, dtype=complex)
            zK = np.zeros(n + 1, dtype=complex)
            return zN, zN.copy(), zK, zK.copy()
        w = trapz_weights(n)
        kw1 = w * k1u[n::-1]
        kw2 = w * k2u[n::-1]
        Xi = (kw1[:, None] * xa[: n + 1]).sum(axis=0) * dt
        Yi = (kw2[:, None] * ya[: n + 1]).sum(axis=0) * dt
        Xpk = (kw1[:, None] * xpa[: n + 1, : n + 1]).sum(axis=0) * dt
        Ypk = (kw2[:, None] * ypa[: n + 1, : n + 1]).sum(axis=0) * dt
        return Xi, Yi, Xpk, Ypk

    def lam_hop(arr, sign):
        d = np.zeros_like(arr)
        if n_modes > 1:
            d[:, :-1] += sign * 1j * lam[:-1] * arr[:, 1:]
            d[:, 1:] += sign * 1j * lam[:-1] * arr[:, :-1]
        return d

    def rhs(xa, ya, xpa, ypa, n, Xi, Yi, Xpk, Ypk):
        """Derivatives of the interior columns m, k <= n."""
        xs = xa[: n + 1]
        ys = ya[: n + 1]
        sx = xs @ l
        sy = ys @ l
        dx = (1j * om) * xs + sx[:, None] * Xi[None, :] \
            + l[None, :] * (xs @ Yi)[:, None] - l[None, :] * Ypk[:, None]
        dx += lam_hop(xs, +1.0)
        dy = (-1j * om) * ys - l[None, :] * (ys @ Xi)[:, None] \
            - sy[:, None] * Yi[None, :] - l[None, :] * Xpk[:, None]
        dy += lam_hop(ys, -1.0)
        dxp = np.outer(sx, Xpk)
        dyp = -np.outer(sy, Ypk)
        return dx, dy, dxp, dyp

    def append_boundaries(xa, ya, xpa, ypa, n1):
        """Install the fresh s- and s'-columns at index n1 = n + 1."""
        xa[n1] = l
        ya[n1] = l
        xpa[n1, : n1 + 1] = 0.0
        ypa[n1, : n1 + 1] = 0.0
        sx = xa[: n1 + 1] @ l
        sy = ya[: n1 + 1] @ l
        xpa[: n1 + 1, n1] = -sx
        ypa[: n1 + 1, n1] = sy
        xpa[n1, n1] = 0.0
        ypa[n1, n1] = 0.0

    for n in range(steps):
        Xi, Yi, Xpk, Ypk = convs(x[n], y[n], xp[n], yp[n], n)
        Xc[n], Yc[n], Xpc[n, : n + 1], Ypc[n, : n + 1] = Xi, Yi, Xpk, Ypk

        d1 = rhs(x[n], y[n], xp[n], yp[n], n, Xi, Yi, Xpk, Ypk)
        px = x[n].copy()
        py = y[n].copy()
        pxp = xp[n].copy()
        pyp = yp[n].copy()
        px[: n + 1] += dt * d1[0]
        py[: n + 1] += dt * d1[1]
        pxp[: n + 1, : n + 1] += dt * d1[2]
        pyp[: n + 1, : n + 1] += dt * d1[3]
        append_boundaries(px, py, pxp, pyp, n + 1)

        Xi_p, Yi_p, Xpk_p, Ypk_p = convs(px, py, pxp, pyp, n + 1)
        d2 = rhs(px, py, pxp, pyp, n, Xi_p, Yi_p, Xpk_p[: n + 1], Ypk_p[: n + 1])

        x[n + 1] = x[n]
        y[n + 1] = y[n]
        xp[n + 1] = xp[n]
        yp[n + 1] = yp[n]
        x[n + 1, : n + 1] += (dt / 2.0) * (d1[0] + d2[0])
        y[n + 1, : n + 1] += (dt / 2.0) * (d1[1] + d2[1])
        xp[n + 1, : n + 1, : n + 1] += (dt / 2.0) * (d1[2] + d2[2])
        yp[n + 1, : n + 1, : n + 1] += (dt / 2.0) * (d1[3] + d2[3])
        append_boundaries(x[n + 1], y[n + 1], xp[n + 1], yp[n + 1], n + 1)
        _guard(x[n + 1], n + 1, dt)
        _guard(y[n + 1], n + 1, dt)

    Xi, Yi, Xpk, Ypk = convs(x[steps], y[steps], xp[steps], yp[steps], steps)
    Xc[steps], Yc[steps] = Xi, Yi
    Xpc[steps, : steps + 1], Ypc[steps, : steps + 1] = Xpk, Ypk

    return ThermalCoeffGrids(dt=dt, x=x, y=y, xp=xp, yp=yp,
                             X=Xc, Y=Yc, Xp=Xpc, Yp=Ypc)
