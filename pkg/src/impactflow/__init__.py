"""Optimal execution under uncertain (Gamma-subordinated) market impact.

Dynamic programming for the risk-neutral value function, Monte Carlo
simulation of the execution dynamics, and closed-form checks.
"""
from impactflow.levy_noise import LevyMoments, SubordinatorSpec, laplace_exponent, moments, sample_increment
from impactflow.impact_model import ImpactSpec, EffectiveDecay, j_operator, linear_value
from impactflow.market_sim import MarketSpec, Strategy, PathResult, MCEstimate, simulate_path, mc_expected_utility
from impactflow.dp_solver import DpParams, DpSolution, solve, extract_strategy, total_mi_cost, value_function

__version__ = "0.1.0"

__all__ = [
    "LevyMoments", "SubordinatorSpec", "laplace_exponent", "moments", "sample_increment",
    "ImpactSpec", "EffectiveDecay", "j_operator", "linear_value",
    "MarketSpec", "Strategy", "PathResult", "MCEstimate", "simulate_path", "mc_expected_utility",
    "DpParams", "DpSolution", "solve", "extract_strategy", "total_mi_cost", "value_function",
]
