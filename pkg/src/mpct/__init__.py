"""Model predictive control for tracking, solved with a three-block extended ADMM."""

from mpct.model import ContinuousModel, LtiModel, discretize_zoh, expm, linearize_pendulum
from mpct.plant import PendulumParams, apply_impulse, pendulum_dynamics, rk4_step
from mpct.problem import (
    EqualityLayout,
    MpctProblem,
    OfflineData,
    PenaltySpec,
    assemble_dense,
    build_offline,
    load_problem,
    pendulum_problem,
)
from mpct.solver import (
    MpctController,
    Solution,
    SolveOptions,
    SolverState,
    residual_norms,
    solve,
    warm_start_shift,
)

__all__ = [
    "ContinuousModel",
    "LtiModel",
    "discretize_zoh",
    "expm",
    "linearize_pendulum",
    "PendulumParams",
    "apply_impulse",
    "pendulum_dynamics",
    "rk4_step",
    "EqualityLayout",
    "MpctProblem",
    "OfflineData",
    "PenaltySpec",
    "assemble_dense",
    "build_offline",
    "load_problem",
    "pendulum_problem",
    "MpctController",
    "Solution",
    "SolveOptions",
    "SolverState",
    "residual_norms",
    "solve",
    "warm_start_shift",
]
