"""Minimal solutions via the inf-convolution sequence, and pathwise comparison."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..generator import AssumptionError, LipschitzApprox, validate_growth_H1
from ..noise import PathEnsemble
from .backward import BSDEPSolution, solve_backward
from .problem import BSDEPProblem
from .regression import RegressionBasis, RegressionPlan

__all__ = ["ComparisonReport", "compare_solutions", "pooled_se", "MinimalSolutionReport", "minimal_solution"]


def pooled_se(a: BSDEPSolution, b: BSDEPSolution) -> float:
    return math.hypot(a.y0_se, b.y0_se)


@dataclass
class ComparisonReport:
    """Pathwise check of ``Y1 <= Y2 + slack`` over every (path, node) pair."""

    slack: float
    fraction: float
    interior_fraction: float
    worst: float
    per_node: np.ndarray = field(repr=False)

    @property
    def passed(self) -> bool:
        return self.fraction == 0.0

    def to_json(self) -> dict:
        return {"slack": self.slack, "fraction": self.fraction, "interior_fraction": self.interior_fraction,
                "worst": self.worst, "per_node": self.per_node.tolist(), "passed": self.passed}


def compare_solutions(sol1: BSDEPSolution, sol2: BSDEPSolution, slack: float = 0.0) -> ComparisonReport:
    if sol1.key != sol2.key or sol1.y.shape != sol2.y.shape:
        raise ValueError("solutions live on different ensembles")
    if slack < 0:
        raise ValueError("slack must be nonnegative")
    excess = sol1.y - sol2.y
    bad = excess > slack
    per_node = bad.mean(axis=0)
    interior = per_node[1:-1] if per_node.size > 2 else per_node[:0]
    return ComparisonReport(slack=float(slack), fraction=float(bad.mean()),
                            interior_fraction=float(interior.mean()) if interior.size else 0.0,
                            worst=float(excess.max()), per_node=per_node)


@dataclass
class MinimalSolutionReport:
    n_list: list
    y0: list
    y0_se: list
    monotone: list          # one entry per consecutive pair of n
    solutions: list = field(repr=False)

    @property
    def minimal(self) -> BSDEPSolution:
        return self.solutions[-1]

    @property
    def y0_nondecreasing(self) -> bool:
        return all(m["y0_ok"] for m in self.monotone)

    def to_json(self) -> dict:
        return {"n_list": self.n_list, "y0": self.y0, "y0_se": self.y0_se, "monotone": self.monotone,
                "y0_nondecreasing": self.y0_nondecreasing}


def minimal_solution(problem: BSDEPProblem, ensemble: PathEnsemble, basis: RegressionBasis = RegressionBasis(),
                     n_list=(1, 2, 4, 8), n_se: float = 3.0, growth_budget: int = 2048,
                     **approx_options) -> MinimalSolutionReport:
    """Solve with ``f_n`` for each ``n`` in ``n_list``; the last solve estimates the minimal solution.

    ``approx_options`` are forwarded to :class:`LipschitzApprox`.
    """
    spec = problem.base_spec
    if spec is None:
        raise ValueError("minimal_solution needs a GeneratorSpec driver")
    n_list = [float(n) for n in n_list]
    if not n_list or any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n_list must be nonempty and strictly increasing")
    if spec.growth is None:
        raise AssumptionError("minimal solutions need the linear-growth process f_t (H1)")
    check = validate_growth_H1(spec, sample_budget=growth_budget)
    if not check.passed:
        raise AssumptionError(f"growth bound fails at {check.witness}")
    plan = RegressionPlan(ensemble, basis)
    sols = []
    for n in n_list:
        approx = LipschitzApprox(spec, n, **approx_options)
        sols.append(solve_backward(problem.with_generator(approx), ensemble, basis, plan=plan))
    monotone = []
    for (na, a), (nb, b) in zip(zip(n_list, sols), zip(n_list[1:], sols[1:])):
        band = n_se * pooled_se(a, b)
        cmp = compare_solutions(a, b, slack=band)
        monotone.append({"n": na, "n_next": nb, "y0_ok": b.y0 >= a.y0 - band, "band": band,
                         "violation_fraction": cmp.fraction, "worst": cmp.worst})
    return MinimalSolutionReport(n_list=n_list, y0=[s.y0 for s in sols], y0_se=[s.y0_se for s in sols],
                                 monotone=monotone, solutions=sols)
