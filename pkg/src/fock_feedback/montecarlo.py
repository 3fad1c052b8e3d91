"""Settling-time sweeps over the gain epsilon.

Realization ``i`` of gain index ``j`` is seeded from
``SeedSequence(master_seed, spawn_key=(j, i))``, so each settling time depends
only on its own coordinates: adding realizations or changing the worker count
never changes existing samples.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from fock_feedback.fock_core import DiagonalState
from fock_feedback.trajectory import RunConfig, simulate_closed_loop

CENSOR_POLICIES = ("exclude", "clamp_to_horizon")
REFERENCE_GAINS = (0.0, 0.1, 1.0, 10.0, 1e2, 1e3, 1e4, 1e5)
SUMMARY_COLUMNS = ("epsilon", "mean_ks", "stddev_ks", "settled", "censored", "realizations")


@dataclass(frozen=True)
class SweepConfig:
    epsilons: tuple
    realizations: int
    base_run: RunConfig
    master_seed: int = 0
    censor_policy: str = "exclude"

    def __post_init__(self):
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))
        if not self.epsilons:
            raise ValueError("epsilons must be non-empty")
        if any(e < 0 for e in self.epsilons):
            raise ValueError("epsilons must be non-negative")
        if self.realizations < 1:
            raise ValueError("realizations must be >= 1")
        if self.censor_policy not in CENSOR_POLICIES:
            raise ValueError(f"censor_policy must be one of {CENSOR_POLICIES}")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        run = self.base_run
        init = run.initial_state
        return {
            "epsilons": list(self.epsilons),
            "realizations": self.realizations,
            "master_seed": self.master_seed,
            "censor_policy": self.censor_policy,
            "stddev": "population",
            "seeding": "SeedSequence(master_seed, spawn_key=(epsilon_index, realization)) -> Philox",
            "base_run": {
                "initial_populations": [float(x) for x in np.real(
                    init.probs if isinstance(init, DiagonalState) else init.diagonal())],
                "params": {"phi0": run.params.phi0, "phiR": run.params.phiR,
                           "theta0": run.params.theta0, "nbar": run.params.nbar},
                "tie_break": list(run.controller.tie_break),
                "horizon": run.horizon,
                "settle_threshold": run.settle_threshold,
                "capacity": run.capacity,
                "absorb_tol": run.absorb_tol,
            },
        }


@dataclass(frozen=True)
class SweepRow:
    epsilon: float
    mean_ks: float
    stddev_ks: float
    settled: int
    censored: int
    realizations: int


@dataclass(frozen=True)
class SweepSummary:
    rows: tuple
    config: SweepConfig
    # per-epsilon settling times, None for censored realizations
    settling_times: tuple

    def to_csv(self, out=None) -> str:
        buf = io.StringIO()
        buf.write("# " + json.dumps(self.config.to_dict(), sort_keys=True) + "\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for r in self.rows:
            writer.writerow([repr(r.epsilon), repr(r.mean_ks), repr(r.stddev_ks),
                             r.settled, r.censored, r.realizations])
        return _emit(buf.getvalue(), out)

    def to_json(self, out=None) -> str:
        doc = {
            "config": self.config.to_dict(),
            "rows": [r.__dict__ for r in self.rows],
        }
        return _emit(json.dumps(doc, indent=2, sort_keys=True) + "\n", out)

    def table(self) -> str:
        lines = [f"{'epsilon':>10} {'mean_ks':>10} {'stddev':>10} {'settled':>8} {'censored':>8}"]
        for r in self.rows:
            lines.append(f"{r.epsilon:>10g} {r.mean_ks:>10.2f} {r.stddev_ks:>10.2f} "
                         f"{r.settled:>8d} {r.censored:>8d}")
        return "\n".join(lines)


def _emit(text: str, out) -> str:
    if out is not None:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    return text


def realization_seed(master_seed: int, eps_index: int, realization: int) -> int:
    ss = np.random.SeedSequence(master_seed, spawn_key=(eps_index, realization))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _run_one(base: RunConfig, epsilon: float, seed: int) -> Optional[int]:
    cfg = replace(base, controller=replace(base.controller, epsilon=epsilon), seed=seed,
                  stop_when_absorbed=True)
    return simulate_closed_loop(cfg).settled_at


def _run_block(base: RunConfig, epsilon: float, eps_index: int, master_seed: int,
               indices: Sequence[int]) -> list:
    out = []
    for i in indices:
        try:
            out.append(_run_one(base, epsilon, realization_seed(master_seed, eps_index, i)))
        except Exception as exc:
            raise type(exc)(f"{exc} [epsilon={epsilon}, realization={i}]") from exc
    return out


def summarize(epsilon: float, times: Sequence[Optional[int]], horizon: int,
              censor_policy: str) -> SweepRow:
    settled = [t for t in times if t is not None]
    censored = len(times) - len(settled)
    if censor_policy == "clamp_to_horizon":
        sample = settled + [horizon] * censored
    else:
        sample = settled
    if sample:
        arr = np.asarray(sample, dtype=float)
        mean, std = float(arr.mean()), float(arr.std())
    else:
        mean = std = math.nan
    return SweepRow(epsilon, mean, std, len(settled), censored, len(times))


def run_sweep(cfg: SweepConfig, workers: int = 1, block: int = 50) -> SweepSummary:
    """Run every (epsilon, realization) pair and reduce to one row per epsilon.

    Work is split into index blocks; results are written back by index, so
    ``workers`` affects wall time only.
    """
    tasks = []
    for j, eps in enumerate(cfg.epsilons):
        for lo in range(0, cfg.realizations, block):
            tasks.append((j, eps, range(lo, min(lo + block, cfg.realizations))))
    buffers = [[None] * cfg.realizations for _ in cfg.epsilons]
    if workers <= 1:
        results = [_run_block(cfg.base_run, eps, j, cfg.master_seed, idx)
                   for j, eps, idx in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_block, cfg.base_run, eps, j, cfg.master_seed, list(idx))
                       for j, eps, idx in tasks]
            results = [f.result() for f in futures]
    for (j, _, idx), times in zip(tasks, results):
        for i, t in zip(idx, times):
            buffers[j][i] = t
    rows = tuple(summarize(eps, buffers[j], cfg.base_run.horizon, cfg.censor_policy)
                 for j, eps in enumerate(cfg.epsilons))
    return SweepSummary(rows, cfg, tuple(tuple(b) for b in buffers))
