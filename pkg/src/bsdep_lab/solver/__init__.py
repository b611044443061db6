"""Backward regression solvers for BSDEs with jumps."""

from .backward import (MAX_IMPLICIT_ITERATIONS, RESIDUAL_RULES, BSDEPSolution, NonFiniteError, ResidualReport, b2_distance,
                       backward_residual, picard_solve, solve_backward)
from .infinite import TruncationReport, solve_infinite_horizon
from .minimal import ComparisonReport, MinimalSolutionReport, compare_solutions, minimal_solution, pooled_se
from .problem import G_FUNCTIONS, BSDEPProblem, Terminal
from .regression import RegressionBasis, RegressionPlan, SingularRegressionError

__all__ = [
    "MAX_IMPLICIT_ITERATIONS", "RESIDUAL_RULES", "BSDEPSolution", "NonFiniteError", "ResidualReport", "b2_distance",
    "backward_residual", "picard_solve", "solve_backward", "TruncationReport", "solve_infinite_horizon",
    "ComparisonReport", "MinimalSolutionReport", "compare_solutions", "minimal_solution", "pooled_se",
    "G_FUNCTIONS", "BSDEPProblem", "Terminal", "RegressionBasis", "RegressionPlan", "SingularRegressionError",
]
