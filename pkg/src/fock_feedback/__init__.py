"""Lyapunov feedback stabilization of photon-number states in a cavity.

Ideal discrete-time Markov model with three measurement channels, a
Lyapunov-based argmin controller, closed-loop trajectories and Monte Carlo
settling-time sweeps.
"""

from fock_feedback.errors import (
    AllZero,
    CapacityExceeded,
    FockFeedbackError,
    ImpossibleOutcome,
    NotFound,
)
from fock_feedback.fock_core import (
    DensityMatrix,
    DiagonalState,
    SupportStats,
    apply_number_function,
    dephase,
    hs_distance,
    support_stats,
)
from fock_feedback.kraus import (
    InteractionParams,
    diagonal_step,
    kraus_element,
    markov_step,
    outcome_probability,
)
from fock_feedback.lyapunov_controller import (
    BoundCertificate,
    ControllerConfig,
    LyapunovReport,
    bound_m0,
    expected_lyapunov,
    feedback,
    lyapunov_value,
    q_v_closed_form,
    q_values,
    window_start,
)
from fock_feedback.trajectory import (
    RunConfig,
    StepRecord,
    Trajectory,
    settling_time,
    simulate_closed_loop,
)
from fock_feedback.montecarlo import SweepConfig, SweepRow, SweepSummary, run_sweep

__version__ = "0.1.0"

__all__ = [
    "AllZero",
    "BoundCertificate",
    "CapacityExceeded",
    "ControllerConfig",
    "DensityMatrix",
    "DiagonalState",
    "FockFeedbackError",
    "ImpossibleOutcome",
    "InteractionParams",
    "LyapunovReport",
    "NotFound",
    "RunConfig",
    "StepRecord",
    "SupportStats",
    "SweepConfig",
    "SweepRow",
    "SweepSummary",
    "Trajectory",
    "apply_number_function",
    "bound_m0",
    "dephase",
    "diagonal_step",
    "expected_lyapunov",
    "feedback",
    "hs_distance",
    "kraus_element",
    "lyapunov_value",
    "markov_step",
    "outcome_probability",
    "q_v_closed_form",
    "q_values",
    "run_sweep",
    "settling_time",
    "simulate_closed_loop",
    "support_stats",
    "window_start",
]
