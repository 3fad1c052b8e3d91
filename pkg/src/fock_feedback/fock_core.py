"""Truncated Fock-space states, functions of the number operator and dephasing.

Two state representations are used throughout the package:

* :class:`DiagonalState` -- populations ``rho_nn`` for ``n = 0..n_max``.
* :class:`DensityMatrix` -- a dense Hermitian, unit-trace matrix ``rho_mn``.

Both are immutable: the wrapped numpy arrays are flagged read-only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from fock_feedback.errors import AllZero

ZERO_TOL = 1e-12
NEG_TOL = 1e-12
TRACE_TOL = 1e-9
HERM_TOL = 1e-10
PSD_TOL = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DiagonalState:
    """Populations of a diagonal density operator, indexed by photon number."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float).reshape(-1)
        if p.size == 0:
            raise ValueError("DiagonalState needs at least one entry")
        if not np.all(np.isfinite(p)):
            raise ValueError("populations must be finite")
        if p.min() < -NEG_TOL:
            raise ValueError(f"negative population {p.min():.3e}")
        if abs(p.sum() - 1.0) > TRACE_TOL:
            raise ValueError(f"populations sum to {p.sum():.15g}, expected 1")
        object.__setattr__(self, "probs", _frozen(p))

    @classmethod
    def point_mass(cls, n: int, dim: int | None = None) -> "DiagonalState":
        dim = n + 1 if dim is None else dim
        if not 0 <= n < dim:
            raise ValueError(f"photon number {n} outside 0..{dim - 1}")
        p = np.zeros(dim)
        p[n] = 1.0
        return cls(p)

    @classmethod
    def uniform(cls, lo: int, hi: int) -> "DiagonalState":
        """Uniform mixture of |lo>..|hi> (inclusive)."""
        if not 0 <= lo <= hi:
            raise ValueError("need 0 <= lo <= hi")
        p = np.zeros(hi + 1)
        p[lo:] = 1.0 / (hi - lo + 1)
        return cls(p)

    @property
    def dim(self) -> int:
        return self.probs.size

    @property
    def n_max(self) -> int:
        return self.dim - 1

    def __eq__(self, other):
        if not isinstance(other, DiagonalState):
            return NotImplemented
        return self.dim == other.dim and bool(np.array_equal(self.probs, other.probs))

    def __hash__(self):
        return hash(self.probs.tobytes())

    def to_density_matrix(self) -> "DensityMatrix":
        return DensityMatrix(np.diag(self.probs).astype(complex))


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Dense density matrix on span{|0>, ..., |dim-1>}.

    Hermiticity and trace are checked on construction; positivity is not
    (it costs an eigendecomposition), call :func:`check_psd` where needed.
    """

    entries: np.ndarray

    def __post_init__(self):
        m = np.array(self.entries, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
            raise ValueError(f"expected a non-empty square matrix, got shape {m.shape}")
        if np.max(np.abs(m - m.conj().T)) > HERM_TOL:
            raise ValueError("matrix is not Hermitian")
        tr = np.trace(m)
        if abs(tr - 1.0) > TRACE_TOL:
            raise ValueError(f"trace is {tr}, expected 1")
        object.__setattr__(self, "entries", _frozen(m))

    @classmethod
    def from_vector(cls, psi) -> "DensityMatrix":
        """Pure state |psi><psi| (psi is normalized here)."""
        psi = np.asarray(psi, dtype=complex).reshape(-1)
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def n_max(self) -> int:
        return self.dim - 1

    def diagonal(self) -> np.ndarray:
        return np.clip(self.entries.diagonal().real, 0.0, None)

    def __eq__(self, other):
        if not isinstance(other, DensityMatrix):
            return NotImplemented
        return self.dim == other.dim and bool(np.array_equal(self.entries, other.entries))

    def __hash__(self):
        return hash(self.entries.tobytes())


State = Union[DiagonalState, DensityMatrix]


@dataclass(frozen=True)
class SupportStats:
    n_min: int
    n_max: int
    n_length: int


def check_psd(rho: DensityMatrix, tol: float = PSD_TOL) -> bool:
    return bool(np.linalg.eigvalsh(rho.entries).min() >= -tol)


def populations(state: State) -> np.ndarray:
    """Photon-number populations of either representation."""
    if isinstance(state, DiagonalState):
        return state.probs
    return state.diagonal()


def apply_number_function(f: Callable[[int], float], shift: int, state_dim: int) -> np.ndarray:
    """Diagonal of ``f(N + shift)`` on a space of dimension ``state_dim``.

    Entries where ``n + shift < 0`` are zero.
    """
    if state_dim < 1:
        raise ValueError("state_dim must be >= 1")
    return np.array(
        [f(n + shift) if n + shift >= 0 else 0.0 for n in range(state_dim)], dtype=float
    )


def dephase(rho: DensityMatrix) -> DiagonalState:
    """Keep only the diagonal of ``rho``; the dimension (hence n_max) is preserved."""
    return DiagonalState(rho.diagonal())


def support_stats(state: State, zero_tolerance: float = ZERO_TOL) -> SupportStats:
    if zero_tolerance < 0:
        raise ValueError("zero_tolerance must be non-negative")
    idx = np.flatnonzero(populations(state) > zero_tolerance)
    if idx.size == 0:
        raise AllZero(f"no population above {zero_tolerance}")
    lo, hi = int(idx[0]), int(idx[-1])
    return SupportStats(lo, hi, hi - lo)


def _pad(m: np.ndarray, dim: int) -> np.ndarray:
    out = np.zeros((dim, dim), dtype=complex)
    out[: m.shape[0], : m.shape[1]] = m
    return out


def hs_distance(a: DensityMatrix, b: DensityMatrix) -> float:
    """Hilbert-Schmidt distance; the smaller matrix is zero-padded."""
    dim = max(a.dim, b.dim)
    diff = _pad(a.entries, dim) - _pad(b.entries, dim)
    return float(np.sqrt(np.sum(np.abs(diff) ** 2)))
