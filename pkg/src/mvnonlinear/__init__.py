"""Mean-variance portfolio selection with different long and short premia."""

__version__ = "0.1.0"

from .closed_form import (AuxiliaryTarget, FrontierPoint, PolicyDecision, Region, dual_objective,
                          efficient_frontier_variance, feedback_policy, frontier_sweep, lagrange_d_star,
                          policy_array, threshold, value_function)
from .errors import MVError, NumericalError, ValidationError
from .hjb_fd import GridConfig, compare_to_closed_form, default_grid, refinement_study, solve_hjb
from .market import CoefficientCurve, MarketParams, ProblemSpec, validate_market
from .mc_engine import SimConfig, TerminalStats, estimate_frontier_point, merge_stats, simulate_paths

__all__ = [
    "AuxiliaryTarget", "CoefficientCurve", "FrontierPoint", "GridConfig", "MVError", "MarketParams",
    "NumericalError", "PolicyDecision", "ProblemSpec", "Region", "SimConfig", "TerminalStats",
    "ValidationError", "compare_to_closed_form", "default_grid", "dual_objective",
    "efficient_frontier_variance", "estimate_frontier_point", "feedback_policy", "frontier_sweep",
    "lagrange_d_star", "merge_stats", "policy_array", "refinement_study", "simulate_paths", "solve_hjb",
    "threshold", "validate_market", "value_function",
]
