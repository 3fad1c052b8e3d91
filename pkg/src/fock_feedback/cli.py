"""Command-line front end: simulate, sweep, bound, verify.

Parameters resolve in order: built-in defaults, then a flat JSON ``--config``
file whose keys mirror the long flag names, then flags given on the command
line.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from typing import Optional, Sequence

from fock_feedback.errors import FockFeedbackError
from fock_feedback.fock_core import DiagonalState
from fock_feedback.kraus import PI_APPROX, InteractionParams
from fock_feedback.lyapunov_controller import ControllerConfig, bound_m0, dominance_holds
from fock_feedback.montecarlo import REFERENCE_GAINS, SweepConfig, run_sweep
from fock_feedback.trajectory import RunConfig, simulate_closed_loop
from fock_feedback.verify import run_all

INITIAL_RANGE = (0, 15)
WORKERS_ENV = "FOCK_FEEDBACK_WORKERS"

DEFAULTS = {
    "nbar": 10,
    "epsilon": 1e3,
    "epsilons": ",".join(repr(e) for e in REFERENCE_GAINS),
    "seed": 0,
    "realizations": 1000,
    "threshold": 0.9,
    "a": 0.4,
    "n0": INITIAL_RANGE[1] - INITIAL_RANGE[0],
    "r0": INITIAL_RANGE[0],
    "format": "csv",
    "quick": False,
    "true_pi": False,
}
HORIZON = {"simulate": 120, "sweep": 10_000}


class UsageError(Exception):
    pass


def _parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--phi0", type=float)
    p.add_argument("--theta0", type=float)
    p.add_argument("--nbar", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--epsilons", help="comma-separated gains")
    p.add_argument("--horizon", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--realizations", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--a", type=float)
    p.add_argument("--n0", type=int)
    p.add_argument("--r0", type=int)
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--workers", type=int)
    p.add_argument("--config", help="flat JSON file of flag values")
    p.add_argument("--quick", action="store_true", default=None)
    p.add_argument("--true-pi", dest="true_pi", action="store_true", default=None)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fock-feedback",
                                     description="Photon-number feedback stabilization.")
    sub = parser.add_subparsers(dest="command", required=True)
    parent = _parent()
    sub.add_parser("simulate", parents=[parent], help="one closed-loop realization")
    sub.add_parser("sweep", parents=[parent], help="settling-time statistics over gains")
    sub.add_parser("bound", parents=[parent], help="support ceiling certificate")
    sub.add_parser("verify", parents=[parent], help="sampled invariant checks")
    return parser


def _load_config(path: str, known: set) -> dict:
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise UsageError(f"{path}: expected a JSON object")
    data = {k.replace("-", "_"): v for k, v in data.items()}
    unknown = sorted(set(data) - known)
    if unknown:
        raise UsageError(f"{path}: unknown keys {unknown}")
    if "config" in data:
        raise UsageError(f"{path}: nested config files are not supported")
    return data


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and command-line flags into one dict."""
    flags = {k: v for k, v in vars(args).items() if k not in ("command",)}
    opts = dict(DEFAULTS)
    opts["horizon"] = HORIZON.get(args.command, 120)
    opts["workers"] = int(os.environ.get(WORKERS_ENV, "1"))
    if args.config:
        opts.update(_load_config(args.config, set(flags)))
    opts.update({k: v for k, v in flags.items() if v is not None and k != "config"})
    pi_ = math.pi if opts["true_pi"] else PI_APPROX
    nbar = int(opts["nbar"])
    opts.setdefault("phi0", None)
    opts.setdefault("theta0", None)
    if opts["phi0"] is None:
        opts["phi0"] = 0.252 * pi_
    if opts["theta0"] is None:
        opts["theta0"] = 2 * pi_ / math.sqrt(nbar + 1)
    if isinstance(opts["epsilons"], str):
        try:
            opts["epsilons"] = [float(x) for x in opts["epsilons"].split(",") if x.strip()]
        except ValueError as exc:
            raise UsageError(f"bad --epsilons: {exc}") from None
    opts["epsilons"] = [float(x) for x in opts["epsilons"]]
    if opts["workers"] < 1:
        raise UsageError("workers must be >= 1")
    return opts


def _params(opts: dict) -> InteractionParams:
    return InteractionParams.theorem_compliant(float(opts["phi0"]), float(opts["theta0"]),
                                               int(opts["nbar"]))


def _initial_state() -> DiagonalState:
    return DiagonalState.uniform(*INITIAL_RANGE)


def _base_run(opts: dict, epsilon: float) -> RunConfig:
    params = _params(opts)
    return RunConfig(
        initial_state=_initial_state(), params=params,
        controller=ControllerConfig(params.nbar, epsilon),
        horizon=int(opts["horizon"]), seed=int(opts["seed"]),
        settle_threshold=float(opts["threshold"]),
    )


def _meta(opts: dict, keys: Sequence[str]) -> dict:
    params = _params(opts)
    meta = {k: opts[k] for k in keys}
    meta.update(phi0=params.phi0, phiR=params.phiR, theta0=params.theta0, nbar=params.nbar,
                initial_state=f"uniform {INITIAL_RANGE[0]}..{INITIAL_RANGE[1]}")
    return meta


def _write(text: str, path: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)


def cmd_simulate(opts: dict) -> int:
    cfg = _base_run(opts, float(opts["epsilon"]))
    traj = simulate_closed_loop(cfg)
    meta = _meta(opts, ("epsilon", "horizon", "seed", "threshold", "true_pi"))
    meta.update(tie_break=list(cfg.controller.tie_break), rng="Philox")
    out = opts.get("out") or f"trajectory.{opts['format']}"
    if opts["format"] == "csv":
        traj.to_csv(out, meta={k: json.dumps(v) for k, v in meta.items()})
    else:
        doc = {"config": meta, "settled_at": traj.settled_at,
               "records": [r.__dict__ for r in traj.records]}
        _write(json.dumps(doc, indent=2, sort_keys=True) + "\n", out)
    print("settling_time", "censored" if traj.settled_at is None else traj.settled_at)
    return 0


def cmd_sweep(opts: dict) -> int:
    eps = opts["epsilons"]
    if not eps:
        raise UsageError("--epsilons is empty")
    cfg = SweepConfig(eps, int(opts["realizations"]), _base_run(opts, 0.0),
                      master_seed=int(opts["seed"]))
    summary = run_sweep(cfg, workers=int(opts["workers"]))
    out = opts.get("out") or f"sweep.{opts['format']}"
    if opts["format"] == "csv":
        summary.to_csv(out)
    else:
        summary.to_json(out)
    print(summary.table())
    return 0


def cmd_bound(opts: dict) -> int:
    eps = float(opts["epsilon"])
    if eps <= 0:
        raise UsageError("bound needs --epsilon > 0")
    params = _params(opts)
    cert = bound_m0(eps, int(opts["n0"]), int(opts["r0"]), params.nbar, params.theta0,
                    float(opts["a"]))
    window = cert.window_ok()
    dominance = dominance_holds(cert, params, ControllerConfig(params.nbar, eps),
                                samples=20 if opts["quick"] else 100, seed=int(opts["seed"]))
    fields = {"m0": cert.m0, "Nbar": cert.Nbar, "N0": cert.N0, "N": cert.N, "a": cert.a,
              "n0": cert.n0, "r0": cert.r0, "nbar": cert.nbar, "epsilon": cert.epsilon,
              "theta0": cert.theta0, "ell": cert.ell, "eta": cert.eta, "h": cert.h,
              "window_membership": "pass" if window else "fail",
              "q_dominance": "pass" if dominance else "fail"}
    for k, v in fields.items():
        print(f"{k}={v}")
    if opts.get("out"):
        _write(json.dumps(fields, indent=2, sort_keys=True) + "\n", opts["out"])
    return 0 if window and dominance else 1


def cmd_verify(opts: dict) -> int:
    params = _params(opts)
    cfg = ControllerConfig(params.nbar, float(opts["epsilon"]))
    results = run_all(params, cfg, quick=bool(opts["quick"]), seed=int(opts["seed"]))
    for r in results:
        print(f"{r.status.upper():<4} {r.name}: {r.detail}")
    failed = [r.name for r in results if not r.ok]
    if failed:
        print("failed: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "bound": cmd_bound,
            "verify": cmd_verify}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = resolve(args)
        return COMMANDS[args.command](opts)
    except UsageError as exc:
        parser.error(str(exc))
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FockFeedbackError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
