"""Distributed proximal minimization over time-varying networks, with scenario-based
violation certificates for the resulting solution."""

__version__ = "0.1.0"

from .consensus import (RunConfig, RunResult, StepSchedule, centralized_solve, feasible_average,
                        lemma5_inequality_check, mix, run, step)
from .model import (L1, AgentSpec, Ball, Box, Halfspace, Intersection, Linear, ProblemSpec,
                    QuadraticDiagonal, Sum)
from .network import NetworkSchedule, make_schedule, phi_product, validate_connectivity
from .prox import ProxRequest, local_solve
from .scenario import (ScenarioConfig, epsilon_common, epsilon_common_improved, epsilon_naive,
                       epsilon_tight, estimate_violation, invert_sample_size)

__all__ = [
    "AgentSpec", "Ball", "Box", "Halfspace", "Intersection", "L1", "Linear", "NetworkSchedule",
    "ProblemSpec", "ProxRequest", "QuadraticDiagonal", "RunConfig", "RunResult", "ScenarioConfig",
    "StepSchedule", "Sum", "centralized_solve", "epsilon_common", "epsilon_common_improved",
    "epsilon_naive", "epsilon_tight", "estimate_violation", "feasible_average", "invert_sample_size",
    "lemma5_inequality_check", "local_solve", "make_schedule", "mix", "phi_product", "run", "step",
    "validate_connectivity",
]
