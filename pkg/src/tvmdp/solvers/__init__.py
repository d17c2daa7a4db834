"""TVMDP and the three comparison solvers."""

from .atmdp import ATMDPOptions, atmdp_solve
from .base import Policy, RewardModel, SolveResult, ValueFunction
from .dtmdp import LayeredPolicy, LayerBudgetError, dtmdp_solve
from .mdp import mdp_value_iteration, solve_mdp
from .tvmdp import TVMDPOptions, tvmdp_solve

__all__ = [
    "ATMDPOptions",
    "LayerBudgetError",
    "LayeredPolicy",
    "Policy",
    "RewardModel",
    "SolveResult",
    "TVMDPOptions",
    "ValueFunction",
    "atmdp_solve",
    "dtmdp_solve",
    "mdp_value_iteration",
    "solve_mdp",
    "tvmdp_solve",
]
