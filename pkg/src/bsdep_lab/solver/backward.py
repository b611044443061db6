"""Backward regression scheme, Picard iteration and residual checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..generator import AssumptionError, GeneratorSpec
from ..noise import PathEnsemble, estimate_norms
from .problem import BSDEPProblem
from .regression import RegressionBasis, RegressionPlan

__all__ = [
    "BSDEPSolution",
    "NonFiniteError",
    "ResidualReport",
    "solve_backward",
    "picard_solve",
    "backward_residual",
    "b2_distance",
    "MAX_IMPLICIT_ITERATIONS",
    "RESIDUAL_RULES",
]

MAX_IMPLICIT_ITERATIONS = 5


class NonFiniteError(ArithmeticError):
    def __init__(self, step: int):
        super().__init__(f"non-finite Y produced at step {step}")
        self.step = step


@dataclass(frozen=True, eq=False)
class BSDEPSolution:
    """Discrete triple ``(Y, Z, U)`` on an ensemble.

    ``y`` is ``(M, N+1)``, ``z`` is ``(M, N, d)``, ``u`` is ``(M, N, m)``;
    ``yhat`` holds the conditional-mean estimates ``E[Y_{k+1} | F_k]``.
    """

    y: np.ndarray
    z: np.ndarray
    u: np.ndarray
    yhat: np.ndarray
    y0: float
    y0_se: float
    ensemble: PathEnsemble = field(repr=False)
    diagnostics: dict = field(default_factory=dict, repr=False)

    @property
    def key(self) -> tuple:
        return self.ensemble.key

    @property
    def grid(self):
        return self.ensemble.grid

    @property
    def n_paths(self) -> int:
        return self.y.shape[0]

    @classmethod
    def from_arrays(cls, ens: PathEnsemble, y, z=None, u=None, diagnostics=None) -> BSDEPSolution:
        """Wrap a candidate triple, e.g. a closed-form solution, for residual and comparison checks."""
        M, N = ens.n_paths, ens.grid.n_steps
        y = np.broadcast_to(np.asarray(y, dtype=float), (M, N + 1)).copy()
        z = np.zeros((M, N, ens.brownian_dim)) if z is None else np.broadcast_to(z, (M, N, ens.brownian_dim)).copy()
        u = np.zeros((M, N, ens.mark_space.size)) if u is None else np.broadcast_to(u, (M, N, ens.mark_space.size)).copy()
        return cls(y=y, z=z, u=u, yhat=y[:, 1:].copy(), y0=float(y[:, 0].mean()),
                   y0_se=float(y[:, 0].std() / math.sqrt(M)), ensemble=ens, diagnostics=diagnostics or {})

    def norms(self) -> dict:
        g, marks = self.grid, self.ensemble.mark_space
        return {"S2": estimate_norms(self.y, "S2", g), "H2": estimate_norms(self.z, "H2", g),
                "L2_jump": estimate_norms(self.u, "L2_jump", g, marks)}


def _driver(problem: BSDEPProblem) -> Callable:
    return problem.generator


def _check_inputs(problem: BSDEPProblem, ens: PathEnsemble) -> None:
    if ens.grid != problem.grid:
        raise ValueError("ensemble grid differs from the problem grid")
    if ens.mark_space != problem.marks:
        raise ValueError("ensemble mark space differs from the problem marks")
    spec = problem.base_spec
    if spec is not None and spec.brownian_dim != ens.brownian_dim:
        raise ValueError(f"driver expects d = {spec.brownian_dim} but the ensemble has d = {ens.brownian_dim}")
    problem.terminal.check_arity(ens.brownian_dim, ens.mark_space.size)


def _sweep(problem: BSDEPProblem, ens: PathEnsemble, plan: RegressionPlan, driver_term: Callable,
           implicit_iterations: int = 0, driver: Callable | None = None):
    """One backward pass.  ``driver_term(k, yhat, z, u)`` gives the driver values at step ``k``."""
    g = ens.grid
    M, N, d, m = ens.n_paths, g.n_steps, ens.brownian_dim, ens.mark_space.size
    dt, lam = g.dt, ens.mark_space.lam
    dW, dmu = ens.dW, ens.compensated_increments
    y = np.empty((M, N + 1))
    z = np.empty((M, N, d))
    u = np.empty((M, N, m))
    yhat = np.empty((M, N))
    fvals = np.empty((M, N))
    z_se = np.empty((N, d))
    y[:, N] = problem.terminal(ens)
    if not np.all(np.isfinite(y[:, N])):
        raise NonFiniteError(N)
    for k in range(N - 1, -1, -1):
        nxt = y[:, k + 1]
        zt = nxt[:, None] * dW[:, k, :] / dt
        targets = np.concatenate([nxt[:, None], zt, nxt[:, None] * dmu[:, k, :] / (lam * dt)], axis=1)
        fitted = plan.fit(k, targets)
        yhat[:, k] = fitted[:, 0]
        z[:, k] = fitted[:, 1:1 + d]
        u[:, k] = fitted[:, 1 + d:]
        z_se[k] = zt.std(axis=0) / math.sqrt(M)
        f = np.asarray(driver_term(k, yhat[:, k], z[:, k], u[:, k]), dtype=float)
        yk = yhat[:, k] + dt * f
        for _ in range(implicit_iterations):
            f = np.asarray(driver(g.nodes[k], yk, z[:, k], u[:, k]), dtype=float)
            yk = yhat[:, k] + dt * f
        if not np.all(np.isfinite(yk)):
            raise NonFiniteError(k)
        fvals[:, k] = f
        y[:, k] = yk
    return y, z, u, yhat, fvals, z_se


def _package(problem, ens, plan, basis, y, z, u, yhat, fvals, z_se, scheme: str) -> BSDEPSolution:
    M = ens.n_paths
    # y0 equals the ensemble mean of eta = xi + dt * sum_k f_k exactly
    eta = y[:, -1] + ens.grid.dt * fvals.sum(axis=1)
    sol = BSDEPSolution(y=y, z=z, u=u, yhat=yhat, y0=float(y[:, 0].mean()),
                        y0_se=float(eta.std() / math.sqrt(M)), ensemble=ens)
    diag = sol.diagnostics
    diag["scheme"] = scheme
    diag["basis"] = basis.to_json()
    diag["condition_numbers"] = [plan.condition(k) for k in range(ens.grid.n_steps)]
    diag["z_mean"] = z.mean(axis=0)
    diag["z_se"] = z_se
    diag["norms"] = sol.norms()
    drv = _driver(problem)
    # inf-convolution drivers are costly; their residual is left to the caller
    if isinstance(drv, GeneratorSpec):
        diag["residual"] = backward_residual(sol, drv).to_json()
    return sol


def solve_backward(problem: BSDEPProblem, ensemble: PathEnsemble, basis: RegressionBasis = RegressionBasis(),
                   implicit_iterations: int = 0, plan: RegressionPlan | None = None) -> BSDEPSolution:
    """Explicit backward Euler with regression estimates of the conditional expectations.

    ``implicit_iterations`` (at most 5) re-evaluates the driver at the
    updated ``Y_k`` for stiff drivers.
    """
    if not 0 <= implicit_iterations <= MAX_IMPLICIT_ITERATIONS:
        raise ValueError(f"implicit_iterations must be in [0, {MAX_IMPLICIT_ITERATIONS}]")
    _check_inputs(problem, ensemble)
    plan = plan or RegressionPlan(ensemble, basis)
    drv = _driver(problem)
    nodes = ensemble.grid.nodes

    def term(k, yh, zk, uk):
        return drv(nodes[k], yh, zk, uk)

    with np.errstate(over="ignore", invalid="ignore"):
        arrays = _sweep(problem, ensemble, plan, term, implicit_iterations, drv)
    scheme = "explicit" if implicit_iterations == 0 else f"implicit-{implicit_iterations}"
    return _package(problem, ensemble, plan, plan.basis, *arrays, scheme=scheme)


def b2_distance(a: BSDEPSolution, b: BSDEPSolution) -> float:
    """``sqrt(|dY|_S2^2 + |dZ|_H2^2 + |dU|_L2^2)`` between two solutions on one ensemble."""
    g, marks = a.grid, a.ensemble.mark_space
    return math.sqrt(estimate_norms(a.y - b.y, "S2", g) + estimate_norms(a.z - b.z, "H2", g)
                     + estimate_norms(a.u - b.u, "L2_jump", g, marks))


def picard_solve(problem: BSDEPProblem, ensemble: PathEnsemble, basis: RegressionBasis = RegressionBasis(),
                 max_iter: int = 50, tol: float = 1e-8) -> BSDEPSolution:
    """Picard iteration with the driver frozen at the previous iterate.

    Iterates start from ``(0, 0, 0)``.  ``diagnostics["picard"]`` holds
    ``converged``, ``iterations`` (index of the first iterate within ``tol``
    of its successor) and the distance trace.  Hitting ``max_iter`` is
    flagged there, not raised.
    """
    spec = problem.base_spec
    if spec is not None and spec.assumption_class != "A":
        raise AssumptionError(f"Picard iteration needs an A-class driver, got {spec.assumption_class}")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    _check_inputs(problem, ensemble)
    plan = RegressionPlan(ensemble, basis)
    drv = _driver(problem)
    g = ensemble.grid
    M, N, d, m = ensemble.n_paths, g.n_steps, ensemble.brownian_dim, ensemble.mark_space.size
    prev = (np.zeros((M, N)), np.zeros((M, N, d)), np.zeros((M, N, m)))
    prev_sol = None
    distances: list[float] = []
    converged, iterations = False, max_iter
    for j in range(1, max_iter + 1):
        yh, zp, up = prev

        def term(k, _yh, _z, _u, yh=yh, zp=zp, up=up):
            return drv(g.nodes[k], yh[:, k], zp[:, k], up[:, k])

        with np.errstate(over="ignore", invalid="ignore"):
            arrays = _sweep(problem, ensemble, plan, term)
        sol = _package(problem, ensemble, plan, basis, *arrays, scheme="picard")
        if prev_sol is not None:
            dist = b2_distance(sol, prev_sol)
            distances.append(dist)
            if dist < tol:
                converged, iterations = True, j - 1
                break
        prev_sol = sol
        prev = (sol.yhat, sol.z, sol.u)
    sol.diagnostics["picard"] = {"converged": converged, "iterations": iterations,
                                 "distances": distances, "tol": tol, "max_iter": max_iter}
    return sol


RESIDUAL_RULES = ("auto", "explicit", "implicit", "trapezoid")


@dataclass(frozen=True)
class ResidualReport:
    """``regression_bias`` is how far the in-sample ``Z``, ``U`` would shift the mean."""

    mean: float
    se: float
    tolerance: float
    rule: str
    regression_bias: float
    per_path: np.ndarray = field(repr=False)

    @property
    def passed(self) -> bool:
        return abs(self.mean) <= self.tolerance

    def to_json(self) -> dict:
        return {"mean": self.mean, "se": self.se, "tolerance": self.tolerance, "rule": self.rule,
                "regression_bias": self.regression_bias, "passed": self.passed}


def _auto_rule(sol: BSDEPSolution) -> str:
    scheme = sol.diagnostics.get("scheme", "")
    if scheme in ("explicit", "picard"):
        return "explicit"
    if scheme.startswith("implicit"):
        return "implicit"
    return "trapezoid"


def backward_residual(sol: BSDEPSolution, driver: Callable, k0: int = 0, k1: int | None = None,
                      n_se: float = 3.0, floor: float = 1e-9, rule: str = "auto") -> ResidualReport:
    """Residual of the discrete backward equation on ``[t_k0, t_k1]``.

    Per path: ``Y_k0 - Y_k1 - sum dt * F_k + sum Z_k dW_k + sum U_k dmu_k``,
    where the driver term ``F_k`` follows ``rule``:

    ``explicit``  ``f(t_k, Yhat_k, Z_k, U_k)``, the equation the default solver solves
    ``implicit``  ``f(t_k, Y_k, Z_k, U_k)``
    ``trapezoid`` ``(f(t_k, Y_k, Z_k, U_k) + f(t_k+1, Y_k+1, Z_k, U_k)) / 2``, for closed-form candidates
    ``auto``      picks from the solution's ``scheme`` diagnostic, else trapezoid

    When the solution carries its regression basis, ``Z_k`` and ``U_k`` in
    the martingale terms are replaced by their leave-one-out refits, since
    the in-sample fit is correlated with the very increment it multiplies
    (a bias of order ``P/M`` per step).  Passes when the ensemble mean is
    within ``n_se`` standard errors (plus ``floor``) of zero.
    """
    if rule not in RESIDUAL_RULES:
        raise ValueError(f"rule must be one of {RESIDUAL_RULES}")
    rule = _auto_rule(sol) if rule == "auto" else rule
    ens = sol.ensemble
    g = ens.grid
    k1 = g.n_steps if k1 is None else k1
    if not 0 <= k0 < k1 <= g.n_steps:
        raise ValueError("need 0 <= k0 < k1 <= N")
    nodes, dt = g.nodes, g.dt
    basis = sol.diagnostics.get("basis")
    plan = RegressionPlan(ens, RegressionBasis(**basis)) if basis is not None else None
    lam = ens.mark_space.lam
    r = sol.y[:, k0] - sol.y[:, k1]
    shift = np.zeros(ens.n_paths)
    for k in range(k0, k1):
        zk, uk = sol.z[:, k], sol.u[:, k]
        if plan is not None:
            h = plan.leverage(k)[:, None]
            nxt = sol.y[:, k + 1][:, None]
            z_loo = (zk - h * nxt * ens.dW[:, k, :] / dt) / (1.0 - h)
            u_loo = (uk - h * nxt * ens.compensated_increments[:, k, :] / (lam * dt)) / (1.0 - h)
            shift += ((zk - z_loo) * ens.dW[:, k, :]).sum(axis=1)
            shift += ((uk - u_loo) * ens.compensated_increments[:, k, :]).sum(axis=1)
            zk, uk = z_loo, u_loo
        if rule == "explicit":
            fk = driver(nodes[k], sol.yhat[:, k], zk, uk)
        elif rule == "implicit":
            fk = driver(nodes[k], sol.y[:, k], zk, uk)
        else:
            fk = 0.5 * (driver(nodes[k], sol.y[:, k], zk, uk) + driver(nodes[k + 1], sol.y[:, k + 1], zk, uk))
        r = r - dt * fk
        r = r + (zk * ens.dW[:, k, :]).sum(axis=1) + (uk * ens.compensated_increments[:, k, :]).sum(axis=1)
    se = float(r.std() / math.sqrt(r.size))
    return ResidualReport(float(r.mean()), se, n_se * se + floor, rule, float(shift.mean()), r)
