"""Measure changes by Doléans-Dade exponentials, and the linear-equation oracle.

The exponential of ``M = int theta dW + int upsilon dmu~`` is evaluated as

    exp(sum theta_k . dW_k - 1/2 sum |theta_k|^2 dt)
      * exp(-sum_k sum_i upsilon(t_k, e_i) lambda_i dt)
      * prod over jumps (s, e) of (1 + upsilon(s, e))

with left-endpoint quadrature in time, accumulated in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .generator import CoefficientFn, CoefficientFns, GeneratorSpec, JumpKernel, constant
from .generator.coefficients import ZERO
from .generator.expr import Y, coef, u_beta, z
from .noise import MarkSpace, NoisePath, PathEnsemble, TimeGrid
from .solver import BSDEPSolution, RegressionBasis, RegressionPlan, Terminal

__all__ = [
    "ExponentialMartingaleSpec",
    "doleans_dade",
    "doleans_dade_ensemble",
    "WeightReport",
    "girsanov_weights",
    "LinearBSDEPSpec",
    "LinearOracleResult",
    "linear_representation",
    "DeltaQuotients",
    "delta_quotients",
]


@dataclass(frozen=True)
class ExponentialMartingaleSpec:
    """Integrands ``theta`` (one coefficient per Brownian component) and ``upsilon`` (a jump kernel).

    ``theta_bound`` is the declared uniform bound on ``|theta_t|``.
    """

    theta: tuple[CoefficientFn, ...] = (ZERO,)
    upsilon: JumpKernel | None = None
    theta_bound: float = math.inf

    @property
    def d(self) -> int:
        return len(self.theta)

    def theta_at(self, t) -> np.ndarray:
        """``theta`` at times ``t``, shape ``shape(t) + (d,)``."""
        return np.stack([np.broadcast_to(th(t), np.shape(t)) for th in self.theta], axis=-1)

    def upsilon_at(self, t, e) -> np.ndarray:
        if self.upsilon is None:
            return np.zeros(np.broadcast_shapes(np.shape(t), np.shape(e)))
        return np.asarray(self.upsilon(t, e), dtype=float)

    def validate(self, grid: TimeGrid, marks: MarkSpace) -> dict:
        """Check the bounds at every node and mark; returns the positivity margin ``min(1 + upsilon)``."""
        th = np.linalg.norm(self.theta_at(grid.nodes), axis=-1)
        if np.any(th > self.theta_bound + 1e-12):
            raise ValueError(f"|theta| reaches {th.max():.6g} above the declared bound {self.theta_bound}")
        margin = math.inf
        if marks.size:
            ups = self.upsilon_at(grid.nodes[:, None], marks.e[None, :])
            if np.any(ups <= -1):
                raise ValueError("upsilon <= -1 at a grid node: the exponential is not positive")
            if self.upsilon is not None:
                self.upsilon.check_bounds(grid.nodes, marks)
            margin = float((1 + ups).min())
        return {"theta_max": float(th.max()), "margin": margin}


def _log_increments(spec: ExponentialMartingaleSpec, grid: TimeGrid, marks: MarkSpace, dW: np.ndarray) -> np.ndarray:
    """Continuous and compensator parts of ``log E`` per step, shape ``dW.shape[:-1]``."""
    if dW.shape[-1] != spec.d:
        raise ValueError(f"theta has {spec.d} components but the noise has d = {dW.shape[-1]}")
    t = grid.nodes[:-1]
    th = spec.theta_at(t)
    out = (dW * th).sum(axis=-1) - 0.5 * (th**2).sum(axis=-1) * grid.dt
    if marks.size:
        comp = (spec.upsilon_at(t[:, None], marks.e[None, :]) * marks.lam).sum(axis=-1) * grid.dt
        out = out - comp
    return out


def _log_jump(spec: ExponentialMartingaleSpec, marks: MarkSpace, times, which) -> np.ndarray:
    ups = spec.upsilon_at(np.asarray(times, dtype=float), marks.e[np.asarray(which, dtype=np.int64)])
    if np.any(ups <= -1):
        raise ValueError("upsilon <= -1 at a jump: the exponential is not positive")
    return np.log1p(ups)


def doleans_dade(path: NoisePath, spec: ExponentialMartingaleSpec, grid: TimeGrid, marks: MarkSpace) -> float:
    """``E(M)_T`` on one path."""
    path.check_against(grid, marks)
    log = _log_increments(spec, grid, marks, path.brownian_increments).sum()
    if path.jump_times.size:
        log += _log_jump(spec, marks, path.jump_times, path.jump_marks).sum()
    return float(math.exp(log))


def doleans_dade_ensemble(ens: PathEnsemble, spec: ExponentialMartingaleSpec, cumulative: bool = False) -> np.ndarray:
    """``E(M)_T`` per path, or ``E(M)_{t_k}`` at every node (shape ``(M, N+1)``) when ``cumulative``."""
    g, marks = ens.grid, ens.mark_space
    steps = _log_increments(spec, g, marks, ens.dW)
    if ens.jump_time.size:
        lj = _log_jump(spec, marks, ens.jump_time, ens.jump_mark)
        np.add.at(steps, (ens.jump_path, g.step_of(ens.jump_time)), lj)
    if not cumulative:
        return np.exp(steps.sum(axis=1))
    log = np.zeros((ens.n_paths, g.n_steps + 1))
    np.cumsum(steps, axis=1, out=log[:, 1:])
    return np.exp(log)


@dataclass(frozen=True)
class WeightReport:
    weights: np.ndarray = field(repr=False)
    mean: float
    se: float
    ess: float
    minimum: float

    def to_json(self) -> dict:
        return {"mean": self.mean, "se": self.se, "ess": self.ess, "min": self.minimum, "n": int(self.weights.size)}


def girsanov_weights(ens: PathEnsemble, spec: ExponentialMartingaleSpec) -> WeightReport:
    spec.validate(ens.grid, ens.mark_space)
    w = doleans_dade_ensemble(ens, spec)
    return WeightReport(weights=w, mean=float(w.mean()), se=float(w.std() / math.sqrt(w.size)),
                        ess=float(w.sum() ** 2 / (w**2).sum()), minimum=float(w.min()))


@dataclass(frozen=True)
class LinearBSDEPSpec:
    """Driver ``a_t y + b_t . z + sum_i alpha_t(e_i) u_i lambda_i + phi_t`` with terminal ``xi``."""

    a: CoefficientFn
    b: tuple[CoefficientFn, ...]
    alpha: JumpKernel | None
    phi: CoefficientFn
    terminal: Terminal
    marks: MarkSpace = field(default_factory=MarkSpace)

    @property
    def d(self) -> int:
        return len(self.b)

    def measure_change(self) -> ExponentialMartingaleSpec:
        bound = math.sqrt(sum(bj.sup_abs() ** 2 for bj in self.b))
        return ExponentialMartingaleSpec(theta=self.b, upsilon=self.alpha, theta_bound=bound)

    def validate(self, grid: TimeGrid) -> None:
        Gamma = self.discount(grid.nodes)
        if not np.all(np.isfinite(Gamma)):
            raise ValueError("discount factor is not finite on the grid")
        self.measure_change().validate(grid, self.marks)
        self.terminal.check_arity(self.d, self.marks.size)

    def discount(self, t) -> np.ndarray:
        """``Gamma_t = exp(int_0^t a)`` in closed form."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.exp(np.array([self.a.integral(0.0, float(s)) for s in t]))

    def to_generator(self) -> GeneratorSpec:
        expr = coef(self.a) * Y + coef(self.phi)
        for j, bj in enumerate(self.b):
            expr = expr + coef(bj) * z(j)
        if self.marks.size and self.alpha is not None:
            expr = expr + u_beta()
        coeffs = CoefficientFns(gamma=self.a.absolute(), rho=_norm_bound(self.b),
                                sigma=ZERO if self.alpha is None else constant(1.0))
        return GeneratorSpec(expr, coeffs, self.marks, brownian_dim=self.d,
                             kernel=self.alpha if self.marks.size else None)


def _norm_bound(b) -> CoefficientFn:
    if len(b) == 1:
        return b[0].absolute()
    return constant(math.sqrt(sum(bj.sup_abs() ** 2 for bj in b)))


@dataclass(frozen=True)
class LinearOracleResult:
    node: int
    y: float
    se: float
    estimates: np.ndarray | None = field(default=None, repr=False)
    weights: WeightReport | None = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {"node": self.node, "y": self.y, "se": self.se,
                "weights": None if self.weights is None else self.weights.to_json()}


def linear_representation(spec: LinearBSDEPSpec, ens: PathEnsemble, k: int = 0,
                          basis: RegressionBasis | None = None) -> LinearOracleResult:
    """``Y_{t_k} = E~[xi Gamma_T / Gamma_k + int_{t_k}^T phi_s Gamma_s / Gamma_k ds | F_{t_k}]``.

    At ``k = 0`` this is a self-normalised weighted mean (no regression);
    for ``k > 0`` a weighted regression on ``basis`` gives per-path values.
    The time integral uses the trapezoidal rule on the grid.
    """
    g = ens.grid
    if not 0 <= k <= g.n_steps:
        raise ValueError("node out of range")
    if ens.mark_space != spec.marks or ens.brownian_dim != spec.d:
        raise ValueError("ensemble does not match the linear spec's marks or dimension")
    spec.validate(g)
    if k > 0 and basis is None:
        raise ValueError("interior nodes need a regression basis")
    Gamma = spec.discount(g.nodes)
    h = spec.phi(g.nodes) * Gamma
    tail = 0.5 * g.dt * (h[k:-1] + h[k + 1:]).sum()
    X = (spec.terminal(ens) * Gamma[-1] + tail) / Gamma[k]
    mc = spec.measure_change()
    if k == 0:
        rep = girsanov_weights(ens, mc)
        w = rep.weights
        est = float((w * X).sum() / w.sum())
        se = float(math.sqrt((w**2 * (X - est) ** 2).sum()) / w.sum())
        return LinearOracleResult(0, est, se, None, rep)
    cum = doleans_dade_ensemble(ens, mc, cumulative=True)
    w = cum[:, -1] / cum[:, k]
    fitted = RegressionPlan(ens, basis).fit_weighted(k, X, w)
    return LinearOracleResult(k, float(fitted.mean()), float(fitted.std() / math.sqrt(fitted.size)), fitted)


@dataclass(frozen=True)
class DeltaQuotients:
    """Difference quotients of ``f1`` along the telescoping path ``Theta1 -> Theta2``.

    ``dy`` is ``(M, N)``, ``dz`` is ``(M, N, d)``, ``du`` is ``(M, N, m)``;
    entries with a zero denominator are 0.  Summing
    ``dy*Yhat + sum dz*Zhat + sum du*Uhat*lambda`` recovers
    ``f1(Theta1) - f1(Theta2)``.
    """

    dy: np.ndarray = field(repr=False)
    dz: np.ndarray = field(repr=False)
    du: np.ndarray = field(repr=False)
    bounds: dict = field(default_factory=dict)

    @property
    def within_bounds(self) -> bool:
        return all(v.get("ok", True) for v in self.bounds.values())


def _quot(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    nz = den != 0
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=nz)
    return out


def delta_quotients(sol1: BSDEPSolution, sol2: BSDEPSolution, f1: GeneratorSpec,
                    coeffs: CoefficientFns | None = None, kernel: JumpKernel | None = None,
                    tol: float = 1e-9) -> DeltaQuotients:
    if sol1.key != sol2.key or sol1.y.shape != sol2.y.shape:
        raise ValueError("solutions live on different ensembles")
    coeffs = coeffs or f1.coeffs
    kernel = kernel or f1.kernel
    ens = sol1.ensemble
    N = ens.grid.n_steps
    t = ens.grid.nodes[:-1][None, :]
    lam = ens.mark_space.lam
    y1, y2 = sol1.y[:, :N], sol2.y[:, :N]
    z1, z2, u1, u2 = sol1.z, sol2.z, sol1.u, sol2.u
    f = lambda yy, zz, uu: f1(np.broadcast_to(t, yy.shape), yy, zz, uu)  # noqa: E731
    dy = _quot(f(y1, z1, u1) - f(y2, z1, u1), y1 - y2)
    dz = np.zeros_like(z1)
    zc = z1.copy()
    for j in range(z1.shape[-1]):
        before = f(y2, zc, u1)
        zc[..., j] = z2[..., j]
        dz[..., j] = _quot(before - f(y2, zc, u1), z1[..., j] - z2[..., j])
    du = np.zeros_like(u1)
    uc = u1.copy()
    for i in range(u1.shape[-1]):
        before = f(y2, z2, uc)
        uc[..., i] = u2[..., i]
        du[..., i] = _quot(before - f(y2, z2, uc), (u1[..., i] - u2[..., i]) * lam[i])
    tt = ens.grid.nodes[:-1]
    bounds = {
        "y": {"max_abs": float(np.abs(dy).max(initial=0.0)),
              "ok": bool(np.all(np.abs(dy) <= coeffs.gamma(tt)[None, :] + tol))},
        "z": {"max_abs": float(np.abs(dz).max(initial=0.0)),
              "ok": bool(np.all(np.abs(dz) <= coeffs.rho(tt)[None, :, None] + tol))},
    }
    if du.shape[-1] and kernel is not None:
        cap = kernel.C * np.minimum(1.0, np.abs(ens.mark_space.e))
        bounds["u"] = {"min": float(du.min()), "max": float(du.max()),
                       "ok": bool(np.all(du > -1) and np.all(du <= cap + tol))}
    return DeltaQuotients(dy, dz, du, bounds)
