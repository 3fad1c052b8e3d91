"""Seeded closed-loop realizations and settling times.

At every step ``k`` the controller picks ``u_k`` from ``rho_k``, one uniform
variate ``r_k`` is drawn and ``y_k = g`` iff ``r_k < p_g``. The variates come
from a Philox counter-based generator seeded with ``RunConfig.seed``, so the
k-th step always consumes the k-th variate of the stream.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence, Union

import numpy as np

from fock_feedback import _kernel
from fock_feedback.errors import CapacityExceeded
from fock_feedback.fock_core import DensityMatrix, DiagonalState, State
from fock_feedback.kraus import (
    CONTROLS,
    DEFAULT_CAPACITY,
    IMPOSSIBLE_PROB,
    InteractionParams,
    branch_populations,
    channel_weights,
    markov_step,
    outcome_probability,
)
from fock_feedback.lyapunov_controller import (
    ControllerConfig,
    _expected_vw,
    choose_control,
    feedback,
    lyapunov_value,
)

CSV_COLUMNS = ("k", "u", "y", "p_g", "pop_below", "pop_goal", "pop_above", "v_eps", "n_max")
SUPPORT_TOL = 1e-12
CHUNK = 1024


@dataclass(frozen=True)
class RunConfig:
    """One closed-loop realization.

    With ``stop_when_absorbed`` the run ends early once the controller plays
    u = 0 on a state whose non-goal mass is at most ``absorb_tol``; that
    mass is a martingale under u = 0, so the chance of it ever climbing back
    to 0.1 is below ``10 * absorb_tol``.
    """

    initial_state: State
    params: InteractionParams
    controller: ControllerConfig
    horizon: int = 120
    seed: int = 0
    settle_threshold: float = 0.9
    capacity: int = DEFAULT_CAPACITY
    stop_when_absorbed: bool = False
    absorb_tol: float = 1e-9

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 0 < self.settle_threshold < 1:
            raise ValueError("settle_threshold must lie in (0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if not 0 < self.absorb_tol < 0.1:
            raise ValueError("absorb_tol must lie in (0, 0.1)")
        if self.capacity < 2:
            raise ValueError("capacity must be >= 2")
        if self.controller.nbar != self.params.nbar:
            raise ValueError("controller and interaction parameters disagree on nbar")


@dataclass(frozen=True)
class StepRecord:
    k: int
    u: int
    y: str
    p_g: float
    pop_below: float
    pop_goal: float
    pop_above: float
    v_eps: float
    n_max: int


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Per-step columns keyed as in CSV_COLUMNS; ``y`` is stored as a g-mask."""

    columns: dict
    settled_at: Optional[int]
    final_state: State
    absorbed_at: Optional[int] = None
    max_trace_drift: float = 0.0

    def __len__(self) -> int:
        return int(self.columns["k"].size)

    @cached_property
    def records(self) -> tuple:
        c = self.columns
        return tuple(
            StepRecord(int(c["k"][i]), int(c["u"][i]), "g" if c["y"][i] else "e",
                       float(c["p_g"][i]), float(c["pop_below"][i]), float(c["pop_goal"][i]),
                       float(c["pop_above"][i]), float(c["v_eps"][i]), int(c["n_max"][i]))
            for i in range(len(self)))

    @property
    def controls(self) -> list[int]:
        return [int(u) for u in self.columns["u"]]

    @property
    def outcomes(self) -> list[str]:
        return ["g" if g else "e" for g in self.columns["y"]]

    def to_csv(self, out=None, meta: Optional[dict] = None) -> str:
        """CSV text with one row per step; ``meta`` goes into leading ``#`` lines."""
        buf = io.StringIO()
        for key, value in (meta or {}).items():
            buf.write(f"# {key}={value}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.records:
            writer.writerow([r.k, r.u, r.y, repr(r.p_g), repr(r.pop_below), repr(r.pop_goal),
                             repr(r.pop_above), repr(r.v_eps), r.n_max])
        text = buf.getvalue()
        if out is not None:
            with open(out, "w", newline="") as fh:
                fh.write(text)
        return text


def _columns_from_records(records: Sequence[StepRecord]) -> dict:
    return {
        "k": np.array([r.k for r in records], dtype=np.int64),
        "u": np.array([r.u for r in records], dtype=np.int8),
        "y": np.array([r.y == "g" for r in records], dtype=bool),
        "p_g": np.array([r.p_g for r in records], dtype=float),
        "pop_below": np.array([r.pop_below for r in records], dtype=float),
        "pop_goal": np.array([r.pop_goal for r in records], dtype=float),
        "pop_above": np.array([r.pop_above for r in records], dtype=float),
        "v_eps": np.array([r.v_eps for r in records], dtype=float),
        "n_max": np.array([r.n_max for r in records], dtype=np.int64),
    }


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def _split(p: np.ndarray, nbar: int) -> tuple[float, float, float]:
    if nbar >= p.size:
        return float(p.sum()), 0.0, 0.0
    return float(p[:nbar].sum()), float(p[nbar]), float(p[nbar + 1:].sum())


def _n_max(p: np.ndarray) -> int:
    idx = np.flatnonzero(p > SUPPORT_TOL)
    return int(idx[-1]) if idx.size else 0


def _pick_outcome(r: float, p_g: float) -> str:
    if p_g <= IMPOSSIBLE_PROB:
        return "e"
    if 1.0 - p_g <= IMPOSSIBLE_PROB:
        return "g"
    return "g" if r < p_g else "e"


def _run_diagonal(cfg: RunConfig, rng: np.random.Generator):
    params, ctl = cfg.params, cfg.controller
    size = cfg.capacity + 2
    d = np.ascontiguousarray(ctl.distance(size), dtype=float)
    w = channel_weights(params, size)
    wq = [np.ascontiguousarray(a[:size], dtype=float)
          for a in (w.qnd_g, w.qnd_e, w.up_g, w.up_e, w.dn_g, w.dn_e)]
    init = np.asarray(cfg.initial_state.probs, dtype=float)
    if init.size > cfg.capacity:
        raise CapacityExceeded(f"state dimension {init.size} exceeds capacity {cfg.capacity}")
    p = np.zeros(size)
    p[: init.size] = init
    L = init.size
    while L > 1 and p[L - 1] == 0.0:
        L -= 1
    tie = np.asarray(ctl.tie_break, dtype=np.int64)
    H = cfg.horizon
    cols = {"u": np.empty(H, np.int8), "y": np.empty(H, np.bool_), "p_g": np.empty(H),
            "pop_below": np.empty(H), "pop_goal": np.empty(H), "pop_above": np.empty(H),
            "v_eps": np.empty(H), "n_max": np.empty(H, np.int64)}
    done, drift, absorbed = 0, 0.0, None
    while done < H:
        n = min(CHUNK, H - done)
        sl = slice(done, done + n)
        steps, L, status, dr = _kernel.run_chunk(
            p, L, *wq, d, float(ctl.epsilon), int(ctl.nbar), tie, rng.random(n),
            bool(cfg.stop_when_absorbed), float(cfg.absorb_tol), int(cfg.capacity),
            cols["u"][sl], cols["y"][sl], cols["p_g"][sl], cols["pop_below"][sl],
            cols["pop_goal"][sl], cols["pop_above"][sl], cols["v_eps"][sl], cols["n_max"][sl])
        drift = max(drift, dr)
        done += steps
        if status == _kernel.ABSORBED:
            absorbed = done - 1
            break
        if status == _kernel.OVER_CAPACITY:
            raise CapacityExceeded(f"state dimension {L + 1} exceeds capacity {cfg.capacity}")
    cols = {k: v[:done] for k, v in cols.items()}
    cols["k"] = np.arange(done, dtype=np.int64)
    final = p[:L].copy()
    return cols, DiagonalState(final / final.sum()), absorbed, drift


def _run_diagonal_reference(cfg: RunConfig, rng: np.random.Generator):
    """Step-by-step numpy loop, kept as an independent check on the kernel."""
    params, ctl = cfg.params, cfg.controller
    nbar, eps = ctl.nbar, ctl.epsilon
    d_ext = ctl.distance(cfg.capacity + 2)
    w = channel_weights(params, cfg.capacity + 1)
    p = np.array(cfg.initial_state.probs, dtype=float)
    records, drift, absorbed = [], 0.0, None
    for k in range(cfg.horizon):
        expected = {}
        for u in CONTROLS:
            ev, ew = _expected_vw(p, u, params, ctl, d_ext)
            expected[u] = ev + eps * ew
        u = choose_control(expected, ctl.tie_break)
        below, goal, above = _split(p, nbar)
        v_eps = float(np.dot(p, d_ext[: p.size]) - eps * np.dot(p, p))
        g = branch_populations(p, u, "g", w)
        p_g = float(g.sum())
        y = _pick_outcome(float(rng.random()), p_g)
        records.append(StepRecord(k, u, y, p_g, below, goal, above, v_eps, _n_max(p)))
        if cfg.stop_when_absorbed and u == 0 and below + above <= cfg.absorb_tol:
            absorbed = k
            break
        new = g if y == "g" else branch_populations(p, u, "e", w)
        total = float(new.sum())
        drift = max(drift, abs(total - (p_g if y == "g" else 1.0 - p_g)))
        p = new / total
        end = p.size
        while end > 1 and p[end - 1] == 0.0:
            end -= 1
        p = p[:end]
        if p.size > cfg.capacity:
            raise CapacityExceeded(f"state dimension {p.size} exceeds capacity {cfg.capacity}")
    return records, DiagonalState(p / p.sum()), absorbed, drift


def _run_dense(cfg: RunConfig, rng: np.random.Generator):
    params, ctl = cfg.params, cfg.controller
    rho: DensityMatrix = cfg.initial_state
    records, drift, absorbed = [], 0.0, None
    for k in range(cfg.horizon):
        u = feedback(rho, params, ctl)
        pops = rho.diagonal()
        below, goal, above = _split(pops, ctl.nbar)
        p_g = outcome_probability(rho, u, "g", params)
        y = _pick_outcome(float(rng.random()), p_g)
        records.append(StepRecord(k, u, y, p_g, below, goal, above,
                                  lyapunov_value(rho, ctl), _n_max(pops)))
        if cfg.stop_when_absorbed and u == 0 and below + above <= cfg.absorb_tol:
            absorbed = k
            break
        p_y = p_g if y == "g" else outcome_probability(rho, u, "e", params)
        rho = markov_step(rho, u, y, params, capacity=cfg.capacity)
        drift = max(drift, abs(p_y - (p_g if y == "g" else 1.0 - p_g)))
    return records, rho, absorbed, drift


def simulate_closed_loop(cfg: RunConfig, reference: bool = False) -> Trajectory:
    """Run the feedback loop for ``cfg.horizon`` steps (or until absorbed).

    Diagonal initial states run in the compiled population kernel, or in the
    plain numpy loop with ``reference=True``. Dense matrices are propagated
    with the full Kraus products.
    """
    rng = make_rng(cfg.seed)
    if isinstance(cfg.initial_state, DiagonalState):
        if reference:
            records, final, absorbed, drift = _run_diagonal_reference(cfg, rng)
            cols = _columns_from_records(records)
        else:
            cols, final, absorbed, drift = _run_diagonal(cfg, rng)
    else:
        records, final, absorbed, drift = _run_dense(cfg, rng)
        cols = _columns_from_records(records)
    settled = settling_time(cols["pop_goal"], cfg.settle_threshold)
    return Trajectory(cols, settled, final, absorbed, drift)


def settling_time(traj: Union[Trajectory, Sequence[float]], threshold: float = 0.9) -> Optional[int]:
    """Smallest k such that pop_goal > threshold at every recorded step >= k.

    Accepts a Trajectory or a bare sequence of goal populations. An absorbed
    trajectory is treated as staying above threshold after its last record.
    Returns None when the last recorded step is not above threshold.
    """
    goals = np.asarray(traj.columns["pop_goal"] if isinstance(traj, Trajectory) else traj,
                       dtype=float)
    if goals.size == 0:
        return None
    low = np.flatnonzero(goals <= threshold)
    if low.size == 0:
        return 0
    if low[-1] == goals.size - 1:
        return None
    return int(low[-1]) + 1
