"""Truncated multi-mode Fock-space algebra.

Operators, states and expectation values for an N-cavity bosonic array with a
per-mode photon-number cutoff.  Cavity 1 is the slowest-varying tensor index:
the basis state |n_1, ..., n_N> sits at flat index

    sum_i n_i * N_c**(N - i)

and every module in the package relies on this ordering.  Operators embedded
in the full space are cached per (space, mode) and stored sparse; states and
density operators are dense arrays.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp


class CutoffError(ValueError):
    """Requested amplitude does not fit in the Fock cutoff."""


class ModeIndexError(IndexError):
    """Mode index outside 1..N."""


@dataclass(frozen=True)
class FockSpace:
    """Truncated tensor-product Fock space: ``num_modes`` modes, ``cutoff``
    levels each (photon numbers 0..cutoff-1)."""

    num_modes: int
    cutoff: int

    def __post_init__(self):
        if self.num_modes < 1:
            raise ValueError(f"num_modes must be positive, got {self.num_modes}")
        if self.cutoff < 2:
            raise ValueError(f"cutoff must be at least 2, got {self.cutoff}")

    @property
    def dim(self) -> int:
        return self.cutoff**self.num_modes

    def check_mode(self, i: int) -> None:
        if not 1 <= i <= self.num_modes:
            raise ModeIndexError(f"mode {i} outside 1..{self.num_modes}")


@dataclass(frozen=True)
class SystemSpec:
    """Cavity-array parameters.

    omegas   -- cavity frequencies Omega_i (Omega = 1 sets the unit).
    lambdas  -- nearest-neighbour couplings lambda_i; open ends require
                lambda_N = 0 (lambda_i couples cavity i to cavity i+1).
    weights  -- environment coupling weights l_i of the collective operator
                A = sum_i l_i a_i; all 1 by default.
    """

    omegas: tuple
    lambdas: tuple
    weights: tuple

    def __post_init__(self):
        object.__setattr__(self, "omegas", tuple(float(x) for x in self.omegas))
        object.__setattr__(self, "lambdas", tuple(float(x) for x in self.lambdas))
        object.__setattr__(self, "weights", tuple(float(x) for x in self.weights))
        n = len(self.omegas)
        if n < 1:
            raise ValueError("need at least one cavity")
        if len(self.lambdas) != n or len(self.weights) != n:
            raise ValueError(
                f"omegas/lambdas/weights lengths differ: "
                f"{n}/{len(self.lambdas)}/{len(self.weights)}"
            )
        if self.lambdas[-1] != 0.0:
            raise ValueError("open boundary requires lambda_N = 0")

    @classmethod
    def uniform(cls, n: int, omega: float = 1.0, lam: float = 0.0,
                weights=None) -> "SystemSpec":
        lams = tuple([lam] * (n - 1) + [0.0])
        w = tuple(weights) if weights is not None else (1.0,) * n
        return cls((omega,) * n, lams, w)

    @property
    def num_cavities(self) -> int:
        return len(self.omegas)

    def asymmetry_eta(self) -> float:
        """(l_3 - l_2)/(l_2 + l_3) for a three-cavity array."""
        if self.num_cavities != 3:
            raise ValueError("asymmetry parameter is defined for N = 3")
        l2, l3 = self.weights[1], self.weights[2]
        return (l3 - l2) / (l2 + l3)


def weights_from_eta(eta: float) -> tuple:
    """Three-cavity weights (1, 1 - eta, 1 + eta) realising a given asymmetry."""
    if not -1.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [-1, 1], got {eta}")
    return (1.0, 1.0 - eta, 1.0 + eta)


@dataclass
class Ket:
    """State vector over a FockSpace.  Norm may differ from 1: linear
    stochastic trajectories are propagated unnormalised."""

    space: FockSpace
    vec: np.ndarray

    def __post_init__(self):
        self.vec = np.asarray(self.vec, dtype=complex)
        if self.vec.shape != (self.space.dim,):
            raise ValueError(
                f"amplitude vector has shape {self.vec.shape}, "
                f"expected ({self.space.dim},)"
            )

    def norm(self) -> float:
        return float(np.linalg.norm(self.vec))

    def normalized(self) -> "Ket":
        return Ket(self.space, self.vec / self.norm())

    def dyad(self) -> "DensOp":
        return DensOp(self.space, np.outer(self.vec, self.vec.conj()))


@dataclass
class DensOp:
    """Density operator over a FockSpace (dense)."""

    space: FockSpace
    mat: np.ndarray

    def __post_init__(self):
        self.mat = np.asarray(self.mat, dtype=complex)
        d = self.space.dim
        if self.mat.shape != (d, d):
            raise ValueError(
                f"matrix has shape {self.mat.shape}, expected ({d}, {d})"
            )

    def trace(self) -> complex:
        return complex(np.trace(self.mat))

    def hermiticity_residual(self) -> float:
        return float(np.abs(self.mat - self.mat.conj().T).max())

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh((self.mat + self.mat.conj().T) / 2)[0])

    def purity(self) -> float:
        return float(np.real(np.vdot(self.mat.conj().T, self.mat)))


@lru_cache(maxsize=None)
def _embedded_annihilator(num_modes: int, cutoff: int, i: int) -> sp.csr_matrix:
    """a_i on the full tensor space, mode 1 slowest index; cached."""
    a = sp.diags(np.sqrt(np.arange(1, cutoff)), 1, dtype=complex)
    left = cutoff ** (i - 1)
    right = cutoff ** (num_modes - i)
    out = sp.kron(sp.identity(left, dtype=complex), a, format="csr")
    out = sp.kron(out, sp.identity(right, dtype=complex), format="csr")
    return out


def mode_annihilator(space: FockSpace, i: int) -> sp.csr_matrix:
    """Truncated annihilator of mode i (1-based), <n-1|a|n> = sqrt(n)."""
    space.check_mode(i)
    return _embedded_annihilator(space.num_modes, space.cutoff, i)


def mode_creator(space: FockSpace, i: int) -> sp.csr_matrix:
    space.check_mode(i)
    return mode_annihilator(space, i).conj().T.tocsr()


def number_operator(space: FockSpace, i: int) -> sp.csr_matrix:
    a = mode_annihilator(space, i)
    return (a.conj().T @ a).tocsr()


def total_number_operator(space: FockSpace) -> sp.csr_matrix:
    out = number_operator(space, 1)
    for i in range(2, space.num_modes + 1):
        out = out + number_operator(space, i)
    return out.tocsr()


def build_system_hamiltonian(spec: SystemSpec, space: FockSpace) -> sp.csr_matrix:
    """H_S = sum_i Omega_i n_i + sum_i lambda_i (a_i^dag a_{i+1} + h.c.).

    Hermitian by construction: each hopping term is added together with its
    conjugate transpose.
    """
    _check_consistent(spec, space)
    h = sp.csr_matrix((space.dim, space.dim), dtype=complex)
    for i in range(1, space.num_modes + 1):
        om = spec.omegas[i - 1]
        if om != 0.0:
            h = h + om * number_operator(space, i)
    for i in range(1, space.num_modes):
        lam = spec.lambdas[i - 1]
        if lam != 0.0:
            hop = mode_creator(space, i) @ mode_annihilator(space, i + 1)
            h = h + lam * (hop + hop.conj().T)
    return h.tocsr()


def collective_operator(spec: SystemSpec, space: FockSpace) -> sp.csr_matrix:
    """Weighted sum A = sum_i l_i a_i coupling the array to the environment."""
    _check_consistent(spec, space)
    out = sp.csr_matrix((space.dim, space.dim), dtype=complex)
    for i in range(1, space.num_modes + 1):
        w = spec.weights[i - 1]
        if w != 0.0:
            out = out + w * mode_annihilator(space, i)
    return out.tocsr()


def _check_consistent(spec: SystemSpec, space: FockSpace) -> None:
    if spec.num_cavities != space.num_modes:
        raise ValueError(
            f"spec has {spec.num_cavities} cavities but space has "
            f"{space.num_modes} modes"
        )


def recommended_cutoff(alpha: complex) -> int:
    """Rule of thumb N_c >= |alpha|^2 + 6|alpha| + 4 for coherent amplitudes."""
    a = abs(alpha)
    return int(math.ceil(a * a + 6.0 * a + 4.0))


def coherent_tail_mass(alpha: complex, cutoff: int) -> float:
    """Poisson probability mass beyond the cutoff, 1 - e^{-|a|^2} sum_{n<Nc} |a|^{2n}/n!."""
    lam = abs(alpha) ** 2
    term = math.exp(-lam)
    total = term
    for n in range(1, cutoff):
        term *= lam / n
        total += term
    return max(0.0, 1.0 - total)


def _coherent_column(cutoff: int, alpha: complex) -> np.ndarray:
    """Single-mode truncated coherent amplitudes, renormalised to unit norm."""
    c = np.zeros(cutoff, dtype=complex)
    c[0] = 1.0
    for n in range(1, cutoff):
        c[n] = c[n - 1] * alpha / math.sqrt(n)
    return c / np.linalg.norm(c)


def _guard_cutoff(space: FockSpace, alpha: complex, strict: bool) -> None:
    need = recommended_cutoff(alpha)
    if space.cutoff < need:
        msg = (
            f"cutoff {space.cutoff} below recommended {need} for "
            f"|alpha| = {abs(alpha):.3g} (tail mass "
            f"{coherent_tail_mass(alpha, space.cutoff):.2e})"
        )
        if strict:
            raise CutoffError(msg)
        warnings.warn(msg, stacklevel=3)


def _single_mode_embed(space: FockSpace, i: int, column: np.ndarray) -> np.ndarray:
    vecs = []
    vac = np.zeros(space.cutoff, dtype=complex)
    vac[0] = 1.0
    for m in range(1, space.num_modes + 1):
        vecs.append(column if m == i else vac)
    out = vecs[0]
    for v in vecs[1:]:
        out = np.kron(out, v)
    return out


def vacuum_state(space: FockSpace) -> Ket:
    v = np.zeros(space.dim, dtype=complex)
    v[0] = 1.0
    return Ket(space, v)


def coherent_state(space: FockSpace, i: int, alpha: complex,
                   strict: bool = False) -> Ket:
    """|alpha> in mode i, vacuum elsewhere; renormalised after truncation."""
    space.check_mode(i)
    _guard_cutoff(space, alpha, strict)
    col = _coherent_column(space.cutoff, alpha)
    return Ket(space, _single_mode_embed(space, i, col))


def cat_state(space: FockSpace, i: int, alpha: complex, theta: float = 0.0,
              strict: bool = False) -> Ket:
    """Even superposition (|a e^{-i theta}> + |-a e^{-i theta}>)/sqrt(norm)
    in mode i, vacuum elsewhere."""
    space.check_mode(i)
    _guard_cutoff(space, alpha, strict)
    a = alpha * np.exp(-1j * theta)
    col = _coherent_column(space.cutoff, a) + _coherent_column(space.cutoff, -a)
    col = col / np.linalg.norm(col)
    return Ket(space, _single_mode_embed(space, i, col))


def partial_trace(rho: DensOp, keep: int) -> DensOp:
    """Reduced single-mode density operator of mode ``keep`` (1-based)."""
    rho.space.check_mode(keep)
    n = rho.space.num_modes
    nc = rho.space.cutoff
    t = rho.mat.reshape((nc,) * (2 * n))
    k = keep - 1
    src = list(range(2 * n))
    for m in range(n):
        if m != k:
            src[n + m] = src[m]
    reduced = np.einsum(t, src, [k, n + k])
    return DensOp(FockSpace(1, nc), reduced)


def expectation(state, op) -> complex:
    """<psi|op|psi> for a Ket, Tr(rho op) for a DensOp."""
    if isinstance(state, Ket):
        if op.shape != (state.space.dim,) * 2:
            raise ValueError(f"operator shape {op.shape} does not match "
                             f"state dimension {state.space.dim}")
        return complex(np.vdot(state.vec, op @ state.vec))
    if isinstance(state, DensOp):
        if op.shape != (state.space.dim,) * 2:
            raise ValueError(f"operator shape {op.shape} does not match "
                             f"state dimension {state.space.dim}")
        if sp.issparse(op):
            return complex((op @ state.mat).trace())
        return complex(np.trace(op @ state.mat))
    raise TypeError(f"expected Ket or DensOp, got {type(state).__name__}")
