"""Infinite horizons by a schedule of truncations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

from ..noise import PathEnsemble, TimeGrid
from .backward import BSDEPSolution, solve_backward
from .problem import BSDEPProblem
from .regression import RegressionBasis

__all__ = ["TruncationReport", "solve_infinite_horizon"]


@dataclass
class TruncationReport:
    horizons: list
    y0: list
    y0_se: list
    differences: list       # |y0(T_j) - y0(T_{j-1})|, None for the first
    tails: list             # closed-form tail integrals at each T_j
    tol: float
    converged: bool
    converged_at: float | None
    solutions: list = field(repr=False)

    def y0_at(self, horizon: float) -> tuple[float, float]:
        i = self.horizons.index(float(horizon))
        return self.y0[i], self.y0_se[i]

    def to_json(self) -> dict:
        return {"horizons": self.horizons, "y0": self.y0, "y0_se": self.y0_se, "differences": self.differences,
                "tails": self.tails, "tol": self.tol, "converged": self.converged, "converged_at": self.converged_at}


def solve_infinite_horizon(problem: BSDEPProblem, ensemble_factory: Callable[[TimeGrid], PathEnsemble],
                           basis: RegressionBasis = RegressionBasis(), schedule=None, tol: float = 1e-3,
                           steps_per_unit: int = 100, n_se: float = 3.0) -> TruncationReport:
    """Solve on ``[0, T*_j]`` for each horizon with the terminal read at ``T*_j``.

    Converged at ``T*_j`` once the tail integral is below ``tol`` and the
    change in ``y0`` from the previous horizon is below ``tol`` plus
    ``n_se`` pooled standard errors.
    """
    if problem.horizon_kind != "truncated_infinite":
        raise ValueError("problem is not a truncated infinite-horizon problem")
    schedule = tuple(problem.truncations if schedule is None else schedule)
    if not schedule or any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("schedule must be nonempty and increasing")
    # raises AssumptionError before any solving when the tail diverges
    tails = [problem.tail_integral(h) for h in schedule]
    if steps_per_unit < 1:
        raise ValueError("steps_per_unit must be >= 1")
    report = TruncationReport(horizons=[], y0=[], y0_se=[], differences=[], tails=[], tol=tol,
                              converged=False, converged_at=None, solutions=[])
    prev: BSDEPSolution | None = None
    for h, tail in zip(schedule, tails):
        grid = TimeGrid(float(h), max(1, int(round(h * steps_per_unit))))
        sol = solve_backward(problem.on_grid(grid), ensemble_factory(grid), basis)
        diff = None if prev is None else abs(sol.y0 - prev.y0)
        report.horizons.append(float(h))
        report.y0.append(sol.y0)
        report.y0_se.append(sol.y0_se)
        report.differences.append(diff)
        report.tails.append(tail)
        report.solutions.append(sol)
        if (not report.converged and diff is not None and tail < tol
                and diff < tol + n_se * math.hypot(sol.y0_se, prev.y0_se)):
            report.converged, report.converged_at = True, float(h)
        prev = sol
    return report
