"""Seeded workbench for reward shaping on finite metric spaces and controlled diffusions."""

from .metric import FiniteMetricSpace, build_cover_tree, estimate_gamma2, gamma2_upper
from .mdp import TabularMDP, policy_iteration, value_iteration

__version__ = "0.1.0"

__all__ = [
    "FiniteMetricSpace",
    "TabularMDP",
    "build_cover_tree",
    "estimate_gamma2",
    "gamma2_upper",
    "policy_iteration",
    "value_iteration",
]
