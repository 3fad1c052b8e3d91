"""Sampled invariant checks of the model and the controller.

Each check returns a PropertyResult with status ``pass``, ``fail`` or ``n/a``.
Checks that rely on phi0/pi and (theta0/pi)^2 being irrational, or on the
goal-centred reference phase, report ``n/a`` when the parameters do not
satisfy those conditions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from fock_feedback.fock_core import DensityMatrix, DiagonalState, dephase, support_stats
from fock_feedback.kraus import (
    CONTROLS,
    IMPOSSIBLE_PROB,
    OUTCOMES,
    InteractionParams,
    diagonal_step,
    kraus_element,
    markov_step,
    outcome_probability,
)
from fock_feedback.lyapunov_controller import (
    ControllerConfig,
    bound_m0,
    dominance_holds,
    lower_threshold,
    lyapunov_value,
    q_v_closed_form,
    q_values,
    window_is_valid,
    window_start,
)

RATIONAL_DENOMINATOR = 1000
RATIONAL_TOL = 1e-9


@dataclass(frozen=True)
class PropertyResult:
    name: str
    status: str
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.status != "fail"


def looks_rational(x: float, max_denominator: int = RATIONAL_DENOMINATOR,
                   tol: float = RATIONAL_TOL) -> bool:
    """True when x is within tol of a fraction with a small denominator."""
    return abs(x - float(Fraction(x).limit_denominator(max_denominator))) <= tol


def assumptions_hold(params: InteractionParams) -> tuple[bool, str]:
    issues = []
    if looks_rational(params.phi0 / math.pi):
        issues.append("phi0/pi is rational")
    if looks_rational((params.theta0 / math.pi) ** 2):
        issues.append("(theta0/pi)^2 is rational")
    target = math.pi / 2 - params.nbar * params.phi0
    if abs(math.remainder(params.phiR - target, 2 * math.pi)) > 1e-12:
        issues.append("phiR != pi/2 - nbar*phi0")
    return not issues, ", ".join(issues)


def random_diagonal(rng: np.random.Generator, max_dim: int = 30, offset: int = 0) -> DiagonalState:
    """Dirichlet populations on a random sparse block of at most max_dim levels
    starting at ``offset``."""
    dim = int(rng.integers(1, max_dim + 1))
    w = rng.dirichlet(np.ones(dim)) * (rng.random(dim) < 0.7)
    if w.sum() == 0:
        w[rng.integers(dim)] = 1.0
    p = np.zeros(offset + dim)
    p[offset:] = w / w.sum()
    return DiagonalState(p)


def random_density(rng: np.random.Generator, max_dim: int = 12) -> DensityMatrix:
    dim = int(rng.integers(2, max_dim + 1))
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    m = g @ g.conj().T
    return DensityMatrix(m / np.trace(m).real)


def _branch_oracle_qv(d: DiagonalState, u: int, params: InteractionParams,
                      cfg: ControllerConfig) -> float:
    """V(d) - E[V] with E[V] summed over explicitly updated branches."""
    cfg0 = ControllerConfig(cfg.nbar, 0.0, cfg.tie_break, cfg.distance_weight)
    expected = 0.0
    for y in OUTCOMES:
        p = outcome_probability(d, u, y, params)
        if p > IMPOSSIBLE_PROB:
            expected += p * lyapunov_value(diagonal_step(d, u, y, params), cfg0)
    return lyapunov_value(d, cfg0) - expected


def check_completeness(params, cfg, n, rng) -> PropertyResult:
    worst = 0.0
    for dim in range(1, n + 1):
        for u in CONTROLS:
            g = kraus_element(u, "g", params, dim)
            e = kraus_element(u, "e", params, dim)
            worst = max(worst, float(np.max(np.abs(g.T @ g + e.T @ e - np.eye(dim)))))
    return PropertyResult("kraus_completeness", "pass" if worst <= 1e-12 else "fail",
                          f"dims 1..{n}, max deviation {worst:.2e}")


def check_closed_form_qv(params, cfg, n, rng) -> PropertyResult:
    worst = worst0 = 0.0
    for _ in range(n):
        d = random_diagonal(rng)
        for u in (-1, 1):
            worst = max(worst, abs(q_v_closed_form(d, u, params, cfg)
                                   - _branch_oracle_qv(d, u, params, cfg)))
        worst0 = max(worst0, abs(_branch_oracle_qv(d, 0, params, cfg)),
                     abs(q_v_closed_form(d, 0, params, cfg)))
    ok = worst <= 1e-10 and worst0 <= 1e-12
    return PropertyResult("closed_form_qv", "pass" if ok else "fail",
                          f"{n} states, u=+-1 err {worst:.2e}, u=0 err {worst0:.2e}")


def check_dephase_commutation(params, cfg, n, rng) -> PropertyResult:
    worst = 0.0
    for _ in range(n):
        rho = random_density(rng)
        d = dephase(rho)
        for u in CONTROLS:
            for y in OUTCOMES:
                p = outcome_probability(rho, u, y, params)
                worst = max(worst, abs(p - outcome_probability(d, u, y, params)))
                if p <= IMPOSSIBLE_PROB:
                    continue
                a = dephase(markov_step(rho, u, y, params)).probs
                b = diagonal_step(d, u, y, params).probs
                m = max(a.size, b.size)
                worst = max(worst, float(np.max(np.abs(np.pad(a, (0, m - a.size))
                                                       - np.pad(b, (0, m - b.size))))))
    return PropertyResult("dephase_commutation", "pass" if worst <= 1e-10 else "fail",
                          f"{n} matrices, max deviation {worst:.2e}")


def check_support_rules(params, cfg, n, rng) -> PropertyResult:
    violations = 0
    for _ in range(n):
        d = random_diagonal(rng, 25)
        u = int(rng.choice(CONTROLS))
        y = OUTCOMES[int(rng.integers(2))]
        if outcome_probability(d, u, y, params) <= IMPOSSIBLE_PROB:
            continue
        before = support_stats(d)
        after = support_stats(diagonal_step(d, u, y, params))
        if after.n_max > before.n_max + (1 if u == 1 else 0) or after.n_length > before.n_length:
            violations += 1
    return PropertyResult("support_rules", "pass" if violations == 0 else "fail",
                          f"{n} steps, {violations} violations")


def check_qw_bound(params, cfg, n, rng) -> PropertyResult:
    worst = 0.0
    for _ in range(n):
        r = q_values(random_diagonal(rng), params, cfg)
        worst = max(worst, *(abs(r.q_w[u]) for u in CONTROLS))
    return PropertyResult("qw_bounded_by_one", "pass" if worst <= 1 else "fail",
                          f"{n} states, max |Q_W| {worst:.3f}")


def check_qw_qnd(params, cfg, n, rng) -> PropertyResult:
    low = min(q_values(random_diagonal(rng), params, cfg).q_w[0] for _ in range(n))
    return PropertyResult("qw_qnd_nonnegative", "pass" if low >= -1e-12 else "fail",
                          f"{n} states, min Q_W(rho,0) {low:.2e}")


def check_qw_point_mass(params, cfg, n, rng) -> PropertyResult:
    worst = max(abs(q_values(DiagonalState.point_mass(m), params, cfg).q_w[u])
                for m in range(51) for u in (-1, 1))
    return PropertyResult("qw_point_mass_ladder", "pass" if worst <= 1e-12 else "fail",
                          f"m=0..50, max |Q_W| {worst:.2e}")


def check_qw_strict(params, cfg, n, rng) -> PropertyResult:
    ok, why = assumptions_hold(params)
    if not ok:
        return PropertyResult("qw_qnd_strict", "n/a", why)
    low = math.inf
    for _ in range(n):
        while True:
            d = random_diagonal(rng)
            if np.count_nonzero(d.probs >= 0.1) >= 2:
                break
        low = min(low, q_values(d, params, cfg).q_w[0])
    return PropertyResult("qw_qnd_strict", "pass" if low > 0 else "fail",
                          f"{n} spread states, min Q_W(rho,0) {low:.2e}")


def _certificate_cfg(cfg: ControllerConfig) -> ControllerConfig:
    eps = cfg.epsilon if cfg.epsilon > 0 else 1e3
    return ControllerConfig(cfg.nbar, eps, cfg.tie_break, cfg.distance_weight)


def check_supermartingale(params, cfg, n, rng) -> PropertyResult:
    ok, why = assumptions_hold(params)
    if not ok:
        return PropertyResult("supermartingale", "n/a", why)
    ce = _certificate_cfg(cfg)
    cert = bound_m0(ce.epsilon, 15, 0, ce.nbar, params.theta0)
    low, flat = math.inf, 0
    for _ in range(n):
        d = random_diagonal(rng, 30, int(rng.integers(0, max(1, cert.m0 - 29))))
        r = q_values(d, params, ce)
        q = r.q_v_eps[r.chosen]
        low = min(low, q)
        flat += q <= 1e-10
    goal = q_values(DiagonalState.point_mass(ce.nbar), params, ce)
    goal_q = goal.q_v_eps[goal.chosen]
    good = low >= -1e-12 and flat == 0 and abs(goal_q) <= 1e-12
    return PropertyResult("supermartingale", "pass" if good else "fail",
                          f"eps={ce.epsilon:g}, m0={cert.m0}, {n} states, min Q {low:.3g}, "
                          f"{flat} flat, goal Q {goal_q:.1e}")


def check_bound_certificate(params, cfg, n, rng) -> PropertyResult:
    ok, why = assumptions_hold(params)
    if not ok:
        return PropertyResult("bound_certificate", "n/a", why)
    ce = _certificate_cfg(cfg)
    bad = []
    for a in (0.1, 0.25, 0.4):
        N = lower_threshold(ce.epsilon, ce.nbar, a)
        for N0 in range(1, 51 if n >= 100 else 11):
            start = window_start(params.theta0, N0, N, a)
            if not (start > N and window_is_valid(params.theta0, start, N0, a)):
                bad.append(f"constructive a={a} N0={N0}")
            elif window_start(params.theta0, N0, N, a, mode="scan", scan_limit=start) > start:
                bad.append(f"scan a={a} N0={N0}")
    cert = bound_m0(ce.epsilon, 15, 0, ce.nbar, params.theta0)
    if cert.m0 <= cert.n0 + cert.r0 + cert.nbar + 1:
        bad.append("m0 too small")
    if not dominance_holds(cert, params, ce, samples=n, seed=int(rng.integers(2**32))):
        bad.append("Q dominance at m0")
    return PropertyResult("bound_certificate", "fail" if bad else "pass",
                          "; ".join(bad) if bad else f"m0={cert.m0}, Nbar={cert.Nbar}, N={cert.N}")


CHECKS: tuple[tuple[Callable, int, int], ...] = (
    # (check, full sample count, quick sample count)
    (check_completeness, 200, 40),
    (check_closed_form_qv, 1000, 100),
    (check_dephase_commutation, 200, 30),
    (check_support_rules, 10_000, 1000),
    (check_qw_bound, 1000, 100),
    (check_qw_qnd, 1000, 100),
    (check_qw_point_mass, 51, 51),
    (check_qw_strict, 100, 20),
    (check_supermartingale, 1000, 100),
    (check_bound_certificate, 100, 20),
)


def run_all(params: InteractionParams, cfg: ControllerConfig, quick: bool = False,
            seed: int = 0) -> list[PropertyResult]:
    out = []
    for i, (check, full, small) in enumerate(CHECKS):
        rng = np.random.default_rng([seed, i])
        out.append(check(params, cfg, small if quick else full, rng))
    return out
