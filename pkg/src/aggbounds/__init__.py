"""Aggregation-based value-function bounds for discounted MDPs, with a UAV
perimeter-patrol model and simulator."""

from .errors import (AggBoundsError, ConvergenceError, DimensionError, LpError, NumericalError,
                     PolicyError, StructureError, ValidationError)
from .mdp_core import (Mdp, Policy, bellman_backup, greedy_policy, policy_evaluation, policy_iteration,
                       porteus_bound, value_iteration)
from .solver import LpProblem, LpSolution, solve_lp
from .aggregation import Partitioning, build_partitioning, solve_rlp

__version__ = "0.1.0"

__all__ = [
    "AggBoundsError", "ConvergenceError", "DimensionError", "LpError", "NumericalError", "PolicyError",
    "StructureError", "ValidationError", "Mdp", "Policy", "bellman_backup", "greedy_policy",
    "policy_evaluation", "policy_iteration", "porteus_bound", "value_iteration", "LpProblem",
    "LpSolution", "solve_lp", "Partitioning", "build_partitioning", "solve_rlp",
]
