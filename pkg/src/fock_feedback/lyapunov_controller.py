"""Lyapunov function, one-step Q-functions, argmin feedback and the support bound.

With populations ``rho_nn`` and a distance ``d`` (default ``(n - nbar)^2``)::

    V(rho)   = sum_n d(n) rho_nn
    W(rho)   = -sum_n rho_nn^2
    V_eps    = V + eps * W
    Q_F(rho, u) = F(rho) - E[F(rho_{k+1}) | rho_k = rho, u_k = u]

The feedback picks the control minimizing the expected next ``V_eps``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from fock_feedback.errors import NotFound
from fock_feedback.fock_core import DensityMatrix, DiagonalState, State, populations
from fock_feedback.kraus import (
    CONTROLS,
    IMPOSSIBLE_PROB,
    InteractionParams,
    branch_populations,
    channel_weights,
    check_control,
    markov_step,
    outcome_probability,
)

DEFAULT_TIE_BREAK = (0, -1, 1)
TIE_TOL = 1e-12


@dataclass(frozen=True)
class ControllerConfig:
    """Goal level, gain and tie-breaking order of the feedback law.

    ``distance_weight`` of None means the quadratic ``(n - nbar)^2``; a custom
    callable must satisfy d(nbar) = 0 and increase away from nbar.
    """

    nbar: int
    epsilon: float = 0.0
    tie_break: tuple[int, ...] = DEFAULT_TIE_BREAK
    distance_weight: Optional[Callable[[int], float]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.nbar < 0 or int(self.nbar) != self.nbar:
            raise ValueError("nbar must be a non-negative integer")
        tb = tuple(int(u) for u in self.tie_break)
        if sorted(tb) != sorted(CONTROLS):
            raise ValueError("tie_break must be a permutation of (-1, 0, 1)")
        object.__setattr__(self, "tie_break", tb)
        object.__setattr__(self, "nbar", int(self.nbar))

    def distance(self, size: int, shift: int = 0) -> np.ndarray:
        """d(n + shift) for n = 0..size-1 (zero where n + shift < 0)."""
        n = np.arange(size) + shift
        if self.distance_weight is None:
            out = (n - self.nbar).astype(float) ** 2
        else:
            out = np.array([self.distance_weight(int(k)) for k in n], dtype=float)
        out[n < 0] = 0.0
        return out


@dataclass(frozen=True)
class LyapunovReport:
    v: float
    w: float
    v_eps: float
    q_v: dict
    q_w: dict
    q_v_eps: dict
    chosen: int


@dataclass(frozen=True)
class BoundCertificate:
    """Support ceiling m0 and the window that certifies it.

    ``sin^2(theta0/2 sqrt(n))`` lies in ``[1/2 - a, 1/2 + a]`` for
    ``n = Nbar .. Nbar + N0 - 1`` and ``m0 = Nbar + n0 + r0``.
    """

    m0: int
    Nbar: int
    N0: int
    a: float
    N: int
    n0: int
    r0: int
    nbar: int
    epsilon: float
    theta0: float
    ell: Optional[int] = None
    eta: Optional[float] = None
    h: Optional[float] = None

    def window_ok(self) -> bool:
        return window_is_valid(self.theta0, self.Nbar, self.N0, self.a)


def lyapunov_value(state: State, cfg: ControllerConfig) -> float:
    """V_eps from the populations only (off-diagonal terms never contribute)."""
    p = populations(state)
    return float(np.dot(p, cfg.distance(p.size)) - cfg.epsilon * np.dot(p, p))


def _expected_vw(p: np.ndarray, u: int, params: InteractionParams, cfg: ControllerConfig,
                 d_ext: np.ndarray) -> tuple[float, float]:
    """(E[V], E[W]) after one step with control u from diagonal populations p.

    ``d_ext`` holds d(n) for n = 0..len(p) (one level of headroom).
    """
    w = channel_weights(params, p.size)
    branches = []
    for y in ("g", "e"):
        b = branch_populations(p, u, y, w)
        branches.append((b, float(b.sum())))
    live = [(b, s) for b, s in branches if s > IMPOSSIBLE_PROB]
    if len(live) == 1:
        b, s = live[0]
        b = b / s
        return float(np.dot(b, d_ext[: b.size])), -float(np.dot(b, b))
    ev = sum(float(np.dot(b, d_ext[: b.size])) for b, _ in branches)
    ew = -sum(float(np.dot(b, b)) / s for b, s in branches)
    return ev, ew


def _expected_vw_dense(rho: DensityMatrix, u: int, params: InteractionParams,
                       cfg: ControllerConfig) -> tuple[float, float]:
    ev = ew = 0.0
    probs = {y: outcome_probability(rho, u, y, params) for y in ("g", "e")}
    live = [y for y in ("g", "e") if probs[y] > IMPOSSIBLE_PROB]
    for y in live:
        weight = probs[y] if len(live) == 2 else 1.0
        q = markov_step(rho, u, y, params, capacity=rho.dim + 1).diagonal()
        ev += weight * float(np.dot(q, cfg.distance(q.size)))
        ew -= weight * float(np.dot(q, q))
    return ev, ew


def _expected_pair(state: State, u: int, params: InteractionParams, cfg: ControllerConfig):
    if isinstance(state, DensityMatrix):
        return _expected_vw_dense(state, u, params, cfg)
    p = state.probs
    return _expected_vw(p, u, params, cfg, cfg.distance(p.size + 1))


def expected_lyapunov(state: State, u: int, params: InteractionParams,
                      cfg: ControllerConfig) -> float:
    """E[V_eps(rho_{k+1}) | rho_k = state, u_k = u].

    A branch whose probability is at most the impossibility threshold is
    dropped and the other branch gets full weight.
    """
    ev, ew = _expected_pair(state, check_control(u), params, cfg)
    return ev + cfg.epsilon * ew


def choose_control(expected: dict, tie_break=DEFAULT_TIE_BREAK) -> int:
    """Argmin over the three expected values, ties resolved by ``tie_break``."""
    vals = [expected[u] for u in CONTROLS]
    lo, hi = min(vals), max(vals)
    tol = TIE_TOL * max(1.0, hi - lo)
    for u in tie_break:
        if expected[u] - lo <= tol:
            return u
    raise AssertionError("unreachable: no control within tolerance of the minimum")


def q_values(state: State, params: InteractionParams, cfg: ControllerConfig) -> LyapunovReport:
    p = populations(state)
    v = float(np.dot(p, cfg.distance(p.size)))
    w = -float(np.dot(p, p))
    q_v, q_w, q_v_eps, expected = {}, {}, {}, {}
    for u in CONTROLS:
        ev, ew = _expected_pair(state, u, params, cfg)
        q_v[u] = v - ev
        q_w[u] = w - ew
        q_v_eps[u] = q_v[u] + cfg.epsilon * q_w[u]
        expected[u] = ev + cfg.epsilon * ew
    return LyapunovReport(
        v=v, w=w, v_eps=v + cfg.epsilon * w, q_v=q_v, q_w=q_w, q_v_eps=q_v_eps,
        chosen=choose_control(expected, cfg.tie_break),
    )


def q_v_closed_form(d: State, u: int, params: InteractionParams, cfg: ControllerConfig) -> float:
    """Q_V from the difference formulas, no branch evaluation.

    u = +1: -sum rho_nn sin^2(theta0/2 sqrt(n+1)) [d(n+1) - d(n)]
    u = -1: -sum rho_nn sin^2(theta0/2 sqrt(n))   [d(n-1) - d(n)]
    """
    u = check_control(u)
    if u == 0:
        return 0.0
    p = populations(d)
    w = channel_weights(params, p.size)
    base = cfg.distance(p.size)
    if u == 1:
        return -float(np.dot(p * w.up_g[: p.size], cfg.distance(p.size, 1) - base))
    return -float(np.dot(p * w.dn_e[: p.size], cfg.distance(p.size, -1) - base))


def feedback(state: State, params: InteractionParams, cfg: ControllerConfig) -> int:
    expected = {u: expected_lyapunov(state, u, params, cfg) for u in CONTROLS}
    return choose_control(expected, cfg.tie_break)


def _sin2_root(theta0: float, n: np.ndarray) -> np.ndarray:
    return np.sin(theta0 / 2 * np.sqrt(n)) ** 2


def window_is_valid(theta0: float, start: int, length: int, a: float) -> bool:
    """Direct check of 1/2 - a <= sin^2(theta0/2 sqrt(n)) <= 1/2 + a on the window."""
    s = _sin2_root(theta0, np.arange(start, start + length, dtype=float))
    return bool(np.all((s >= 0.5 - a) & (s <= 0.5 + a)))


def _constructive_window(theta0: float, N0: int, N: int, a: float):
    n0e = N0 + (N0 % 2)
    th = abs(theta0)
    h = math.pi / 4 - math.asin(math.sqrt(0.5 - a))

    def eta(ell: int) -> float:
        return (2 / th * (ell * math.pi / 2 + math.pi / 4)) ** 2

    # both conditions only need eta(ell) large enough; start near the bound
    target = n0e / 2 + max(N, (th * n0e / (8 * h)) ** 2)
    ell = max(0, math.floor((th / 2 * math.sqrt(target) - math.pi / 4) / (math.pi / 2)) - 2)
    ell += ell % 2
    while True:
        e = eta(ell)
        if e > n0e / 2 + N and th * n0e / 8 / math.sqrt(e - n0e / 2) <= h:
            break
        ell += 2
    return math.floor(e) - n0e // 2 + 1, ell, e, h


def _scan_window(theta0: float, N0: int, N: int, a: float, scan_limit: int) -> int:
    chunk = 1 << 16
    run = 0
    start = N + 1
    while start <= scan_limit:
        n = np.arange(start, min(start + chunk, scan_limit + N0), dtype=float)
        s = _sin2_root(theta0, n)
        ok = (s >= 0.5 - a) & (s <= 0.5 + a)
        for i, good in enumerate(ok):
            run = run + 1 if good else 0
            if run == N0:
                first = int(n[i]) - N0 + 1
                if first <= scan_limit:
                    return first
                break
        start = int(n[-1]) + 1
    raise NotFound(f"no window of length {N0} starting in ({N}, {scan_limit}]")


def window_start(theta0: float, N0: int, N: int, a: float, mode: str = "constructive",
                 scan_limit: int = 10_000_000) -> int:
    """First photon number Nbar > N opening a window of N0 levels with
    sin^2(theta0/2 sqrt(n)) within a of 1/2.

    ``constructive`` places the window around eta(ell) = [2/theta0 (ell pi/2 +
    pi/4)]^2 for an even ell large enough that sqrt varies by less than
    h = pi/4 - arcsin(sqrt(1/2 - a)) across it (odd N0 is padded by one).
    ``scan`` returns the smallest valid start above N.
    """
    if theta0 == 0:
        raise ValueError("theta0 must be nonzero")
    if not 0 < a < 0.5:
        raise ValueError("a must lie in (0, 1/2)")
    if N0 < 1 or N < 1:
        raise ValueError("N0 and N must be positive")
    if mode == "constructive":
        return _constructive_window(theta0, N0, N, a)[0]
    if mode == "scan":
        return _scan_window(theta0, N0, N, a, scan_limit)
    raise ValueError(f"unknown mode {mode!r}")


def lower_threshold(epsilon: float, nbar: int, a: float) -> int:
    """Smallest integer N with N >= (2 eps / (1/2 - a) + 2 nbar + 1) / 2."""
    return max(1, math.ceil(0.5 * (2 * epsilon / (0.5 - a) + 2 * nbar + 1)))


def bound_m0(epsilon: float, n0: int, r0: int, nbar: int, theta0: float,
             a: float = 0.4) -> BoundCertificate:
    """Ceiling m0 on n_max along closed-loop runs started with n_length = n0
    and n_min = r0."""
    if epsilon <= 0:
        raise ValueError("bound_m0 needs epsilon > 0")
    if not 0 < a < 0.5:
        raise ValueError("a must lie in (0, 1/2)")
    if n0 < 0 or r0 < 0:
        raise ValueError("n0 and r0 must be non-negative")
    N = lower_threshold(epsilon, nbar, a)
    N0 = n0 + r0 + 1
    Nbar, ell, eta, h = _constructive_window(theta0, N0, N, a)
    return BoundCertificate(
        m0=Nbar + n0 + r0, Nbar=Nbar, N0=N0, a=a, N=N, n0=n0, r0=r0, nbar=nbar,
        epsilon=epsilon, theta0=theta0, ell=ell, eta=eta, h=h,
    )


def random_top_state(rng: np.random.Generator, m0: int, n0: int) -> DiagonalState:
    """Random diagonal state with n_max = m0 and n_length <= n0."""
    length = int(rng.integers(0, n0 + 1))
    p = np.zeros(m0 + 1)
    w = rng.dirichlet(np.ones(length + 1))
    w[-1] = max(w[-1], 1e-3)
    p[m0 - length:] = w / w.sum()
    return DiagonalState(p)


def dominance_holds(cert: BoundCertificate, params: InteractionParams, cfg: ControllerConfig,
                    samples: int = 100, seed: int = 0) -> bool:
    """Q_Veps(rho, -1) > max(Q_Veps(rho, 0), Q_Veps(rho, +1)) on random states
    sitting at the ceiling."""
    rng = np.random.default_rng(seed)
    for _ in range(samples):
        q = q_values(random_top_state(rng, cert.m0, cert.n0), params, cfg).q_v_eps
        if not q[-1] > max(q[0], q[1]):
            return False
    return True
