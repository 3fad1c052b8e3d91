"""The three measurement channels and the one-step Markov update.

Controls are the integers -1, 0, +1; outcomes are the strings ``"g"``/``"e"``.

u = 0   dispersive (QND) probe::

    M_g(0) = cos((phi0 N + phiR)/2)        M_e(0) = sin((phi0 N + phiR)/2)

u = +1  resonant probe entering in |e>::

    M_g(+1)|n> = sin(theta0/2 sqrt(n+1)) |n+1>
    M_e(+1)    = cos(theta0/2 sqrt(N+1))

u = -1  resonant probe entering in |g>::

    M_g(-1)    = cos(theta0/2 sqrt(N))
    M_e(-1)|n> = sin(theta0/2 sqrt(n)) |n-1>     (zero on |0>)

All matrix elements are real in the Fock basis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Literal

import numpy as np

from fock_feedback.errors import CapacityExceeded, ImpossibleOutcome
from fock_feedback.fock_core import DensityMatrix, DiagonalState, State

ControlInput = Literal[-1, 0, 1]
Outcome = Literal["g", "e"]

CONTROLS: tuple[int, ...] = (-1, 0, 1)
OUTCOMES: tuple[str, ...] = ("g", "e")

IMPOSSIBLE_PROB = 1e-14
DEFAULT_CAPACITY = 512

# Three-digit stand-in for pi in the default phi0 and theta0; keeps phi0/pi and
# (theta0/pi)^2 irrational.
PI_APPROX = 3.14


def check_control(u) -> int:
    if u not in CONTROLS:
        raise ValueError(f"control must be one of {CONTROLS}, got {u!r}")
    return int(u)


def check_outcome(y) -> str:
    if y not in OUTCOMES:
        raise ValueError(f"outcome must be 'g' or 'e', got {y!r}")
    return y


@dataclass(frozen=True)
class InteractionParams:
    """Probe parameters (radians) and the goal photon number."""

    phi0: float
    phiR: float
    theta0: float
    nbar: int

    def __post_init__(self):
        if self.theta0 == 0:
            raise ValueError("theta0 must be nonzero")
        if int(self.nbar) != self.nbar or self.nbar < 0:
            raise ValueError("nbar must be a non-negative integer")
        object.__setattr__(self, "nbar", int(self.nbar))

    @classmethod
    def theorem_compliant(cls, phi0: float, theta0: float, nbar: int) -> "InteractionParams":
        """Set the reference phase so the goal level sits at phase pi/2."""
        return cls(phi0=phi0, phiR=math.pi / 2 - nbar * phi0, theta0=theta0, nbar=nbar)

    @classmethod
    def reference(cls, nbar: int = 10, true_pi: bool = False) -> "InteractionParams":
        """phi0 = 0.252 pi', theta0 = 2 pi' / sqrt(nbar + 1) with pi' = 3.14.

        ``true_pi=True`` uses math.pi for pi' instead. The pi/2 in phiR is
        always the true constant.
        """
        pi_ = math.pi if true_pi else PI_APPROX
        return cls.theorem_compliant(0.252 * pi_, 2 * pi_ / math.sqrt(nbar + 1), nbar)


@dataclass(frozen=True)
class ChannelWeights:
    """Squared matrix elements per level n (arrays of a common length).

    ``qnd_g[n]``/``qnd_e[n]``: cos^2/sin^2((phi0 n + phiR)/2);
    ``up_g[n]``/``up_e[n]``: sin^2/cos^2(theta0/2 sqrt(n+1));
    ``dn_g[n]``/``dn_e[n]``: cos^2/sin^2(theta0/2 sqrt(n)).
    """

    qnd_g: np.ndarray
    qnd_e: np.ndarray
    up_g: np.ndarray
    up_e: np.ndarray
    dn_g: np.ndarray
    dn_e: np.ndarray


@lru_cache(maxsize=64)
def _weight_table(params: InteractionParams, size: int) -> ChannelWeights:
    n = np.arange(size, dtype=float)
    qnd = (params.phi0 * n + params.phiR) / 2
    up = params.theta0 / 2 * np.sqrt(n + 1)
    dn = params.theta0 / 2 * np.sqrt(n)
    arrays = [np.cos(qnd) ** 2, np.sin(qnd) ** 2, np.sin(up) ** 2,
              np.cos(up) ** 2, np.cos(dn) ** 2, np.sin(dn) ** 2]
    for a in arrays:
        a.setflags(write=False)
    return ChannelWeights(*arrays)


def channel_weights(params: InteractionParams, size: int) -> ChannelWeights:
    """Weights for levels 0..size-1 (possibly longer arrays, never shorter)."""
    bucket = 64
    while bucket < size:
        bucket *= 2
    return _weight_table(params, bucket)


def kraus_element(u: ControlInput, y: Outcome, params: InteractionParams, dim: int) -> np.ndarray:
    """Matrix of M_y(u) restricted to span{|0>..|dim-1>}.

    Shape is (dim+1, dim) for (+1, g), (dim-1, dim) for (-1, e), else (dim, dim).
    """
    u, y = check_control(u), check_outcome(y)
    if dim < 1:
        raise ValueError("dim must be >= 1")
    n = np.arange(dim, dtype=float)
    if u == 0:
        x = (params.phi0 * n + params.phiR) / 2
        return np.diag(np.cos(x) if y == "g" else np.sin(x))
    if u == 1:
        x = params.theta0 / 2 * np.sqrt(n + 1)
        if y == "e":
            return np.diag(np.cos(x))
        m = np.zeros((dim + 1, dim))
        m[np.arange(1, dim + 1), np.arange(dim)] = np.sin(x)
        return m
    x = params.theta0 / 2 * np.sqrt(n)
    if y == "g":
        return np.diag(np.cos(x))
    m = np.zeros((dim - 1, dim))
    # column 0 stays zero: a|0> = 0 under the sin(0)/0 = 1 convention
    m[np.arange(dim - 1), np.arange(1, dim)] = np.sin(x[1:])
    return m


def branch_populations(p: np.ndarray, u: int, y: str, w: ChannelWeights) -> np.ndarray:
    """Unnormalized populations of M_y(u) rho M_y(u)^T for diagonal rho.

    Output length is len(p)+1 for (+1, g) and len(p) otherwise.
    """
    dim = p.size
    if u == 0:
        return p * (w.qnd_g[:dim] if y == "g" else w.qnd_e[:dim])
    if u == 1:
        if y == "e":
            return p * w.up_e[:dim]
        out = np.empty(dim + 1)
        out[0] = 0.0
        out[1:] = p * w.up_g[:dim]
        return out
    if y == "g":
        return p * w.dn_g[:dim]
    out = np.empty(dim)
    out[:-1] = p[1:] * w.dn_e[1:dim]
    out[-1] = 0.0
    return out


def _diag_probability(p: np.ndarray, u: int, y: str, params: InteractionParams) -> float:
    w = channel_weights(params, p.size)
    dim = p.size
    if u == 0:
        weights = w.qnd_g if y == "g" else w.qnd_e
    elif u == 1:
        weights = w.up_g if y == "g" else w.up_e
    else:
        weights = w.dn_g if y == "g" else w.dn_e
    return float(np.dot(p, weights[:dim]))


def outcome_probability(rho: State, u: ControlInput, y: Outcome, params: InteractionParams) -> float:
    """Tr(M_y(u) rho M_y(u)^dagger).

    Diagonal states use the closed-form population sums; dense matrices go
    through the full matrix product.
    """
    u, y = check_control(u), check_outcome(y)
    if isinstance(rho, DiagonalState):
        return _diag_probability(rho.probs, u, y, params)
    m = kraus_element(u, y, params, rho.dim)
    return float(np.real(np.trace(m @ rho.entries @ m.T)))


def _check_capacity(dim: int, capacity: int) -> None:
    if dim > capacity:
        raise CapacityExceeded(f"state dimension {dim} exceeds capacity {capacity}")


def markov_step(rho: DensityMatrix, u: ControlInput, y: Outcome, params: InteractionParams,
                capacity: int = DEFAULT_CAPACITY) -> DensityMatrix:
    """Conditional update M rho M^dagger / Tr(.) for a dense state.

    The result keeps the input dimension except for (+1, g), which adds one
    level. Normalization divides by the computed trace of the product.
    """
    u, y = check_control(u), check_outcome(y)
    m = kraus_element(u, y, params, rho.dim)
    out_dim = max(rho.dim, m.shape[0])
    _check_capacity(out_dim, capacity)
    unnorm = m @ rho.entries @ m.T
    tr = float(np.real(np.trace(unnorm)))
    if tr <= IMPOSSIBLE_PROB:
        raise ImpossibleOutcome(f"outcome {y} under u={u} has probability {tr:.3e}")
    full = np.zeros((out_dim, out_dim), dtype=complex)
    full[: unnorm.shape[0], : unnorm.shape[0]] = unnorm / tr
    return DensityMatrix((full + full.conj().T) / 2)


def diagonal_step(d: DiagonalState, u: ControlInput, y: Outcome, params: InteractionParams,
                  capacity: int = DEFAULT_CAPACITY) -> DiagonalState:
    """Population update for a diagonal state without any matrix product."""
    u, y = check_control(u), check_outcome(y)
    out_dim = d.dim + 1 if (u == 1 and y == "g") else d.dim
    _check_capacity(out_dim, capacity)
    new = branch_populations(d.probs, u, y, channel_weights(params, d.dim))
    total = float(new.sum())
    if total <= IMPOSSIBLE_PROB:
        raise ImpossibleOutcome(f"outcome {y} under u={u} has probability {total:.3e}")
    return DiagonalState(new / total)
