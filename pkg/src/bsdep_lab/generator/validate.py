"""Sampling validators for the structural assumptions on a driver.

A FAIL always carries a witness that can be re-checked with
:func:`~bsdep_lab.generator.spec.eval_generator`; a PASS is only evidence.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .coefficients import CoefficientFn, Modulus
from .spec import GeneratorSpec, JumpKernel

__all__ = [
    "Box",
    "ValidationReport",
    "validate_lipschitz_A2",
    "validate_jump_monotone_A3",
    "validate_weak_monotone_H2",
    "validate_growth_H1",
    "lemma_phi_bound",
    "validate_declared",
]

ABS_TOL = 1e-10


@dataclass(frozen=True)
class Box:
    """Axis-aligned sampling region; ``z`` and ``u`` ranges apply per component."""

    t: tuple[float, float] = (0.0, 1.0)
    y: tuple[float, float] = (-10.0, 10.0)
    z: tuple[float, float] = (-10.0, 10.0)
    u: tuple[float, float] = (-10.0, 10.0)

    def __post_init__(self):
        for name in ("t", "y", "z", "u"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
                raise ValueError(f"degenerate box: {name} range [{lo}, {hi}] has no volume")


@dataclass
class ValidationReport:
    check: str
    verdict: str
    worst: float
    n_samples: int
    witness: dict | None = None
    notes: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == "PASS"

    def to_json(self) -> dict:
        return {"check": self.check, "verdict": self.verdict, "worst": self.worst,
                "n_samples": self.n_samples, "witness": self.witness, "notes": self.notes}


def _sample(rng, box: Box, n: int, d: int, m: int):
    t = rng.uniform(*box.t, size=n)
    y = rng.uniform(*box.y, size=n)
    z = rng.uniform(*box.z, size=(n, d))
    u = rng.uniform(*box.u, size=(n, m))
    return t, y, z, u


def _axis_mask(rng, n: int) -> np.ndarray:
    # a third of the pairs move only y, a third only z, the rest both
    return rng.integers(0, 3, size=n)


def _point(t, y, z, u) -> dict:
    return {"t": float(t), "y": float(y), "z": np.asarray(z, float).tolist(), "u": np.asarray(u, float).tolist()}


def _check_budget(sample_budget: int) -> None:
    if sample_budget < 1:
        raise ValueError("sample_budget must be >= 1")


def validate_lipschitz_A2(spec: GeneratorSpec, coeffs=None, sample_budget: int = 4096,
                          box: Box = Box(), seed: int = 0, tol: float = 1e-9) -> ValidationReport:
    """Check ``|f(t,y,z,u) - f(t,y',z',u)| <= gamma |y-y'| + rho |z-z'|`` on sampled pairs."""
    _check_budget(sample_budget)
    coeffs = coeffs or spec.coeffs
    rng = np.random.default_rng(seed)
    n, d, m = sample_budget, spec.brownian_dim, spec.m
    t, y, z, u = _sample(rng, box, n, d, m)
    _, y2, z2, _ = _sample(rng, box, n, d, m)
    axis = _axis_mask(rng, n)
    y2 = np.where(axis == 1, y, y2)
    z2 = np.where((axis == 0)[:, None], z, z2)
    lhs = np.abs(spec(t, y, z, u) - spec(t, y2, z2, u))
    rhs = coeffs.gamma(t) * np.abs(y - y2) + coeffs.rho(t) * np.linalg.norm(z - z2, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, lhs / rhs, np.where(lhs > ABS_TOL, np.inf, 0.0))
    bad = lhs > rhs * (1 + tol) + ABS_TOL
    i = int(np.argmax(ratio))
    witness = None
    if bad.any():
        i = int(np.argmax(np.where(bad, ratio, -np.inf)))
        witness = {"x": _point(t[i], y[i], z[i], u[i]), "x_prime": _point(t[i], y2[i], z2[i], u[i]),
                   "lhs": float(lhs[i]), "rhs": float(rhs[i])}
    return ValidationReport("A2", "FAIL" if bad.any() else "PASS", float(ratio[i]), n, witness)


def validate_jump_monotone_A3(spec: GeneratorSpec, kernel: JumpKernel | None = None,
                              sigma: CoefficientFn | None = None, sample_budget: int = 4096,
                              box: Box = Box(), seed: int = 0, tol: float = 1e-9) -> ValidationReport:
    """Check ``f(.., u) - f(.., u') <= sigma(t) sum_i (u_i - u'_i) beta_t(e_i) lambda_i`` in both orders."""
    _check_budget(sample_budget)
    kernel = kernel or spec.kernel
    sigma = sigma or spec.coeffs.sigma
    if kernel is None:
        raise ValueError("A3 needs a jump kernel")
    if spec.m == 0:
        return ValidationReport("A3", "PASS", 0.0, 0, notes={"reason": "no marks"})
    rng = np.random.default_rng(seed)
    n = sample_budget
    t, y, z, u = _sample(rng, box, n, spec.brownian_dim, spec.m)
    u2 = rng.uniform(*box.u, size=u.shape)
    lam, e = spec.marks.lam, spec.marks.e
    diff = spec(t, y, z, u) - spec(t, y, z, u2)
    weighted = ((u - u2) * kernel.beta(t[:, None], e[None, :]) * lam).sum(axis=-1)
    rhs = sigma(t) * weighted
    # both orders: (u, u') and (u', u)
    lhs_all = np.concatenate([diff, -diff])
    rhs_all = np.concatenate([rhs, -rhs])
    excess = lhs_all - rhs_all
    bad = excess > tol * np.abs(rhs_all) + ABS_TOL
    i = int(np.argmax(excess))
    witness = None
    if bad.any():
        j = i % n
        first, second = (u[j], u2[j]) if i < n else (u2[j], u[j])
        witness = {"x": _point(t[j], y[j], z[j], first), "x_prime": _point(t[j], y[j], z[j], second),
                   "lhs": float(lhs_all[i]), "rhs": float(rhs_all[i])}
    return ValidationReport("A3", "FAIL" if bad.any() else "PASS", float(excess[i]), 2 * n, witness,
                            notes={"orders": "both"})


def validate_weak_monotone_H2(spec: GeneratorSpec, gamma: CoefficientFn | None = None,
                              modulus: Modulus | None = None, sample_budget: int = 4096,
                              box: Box = Box(), seed: int = 0, tol: float = 1e-9) -> ValidationReport:
    """Check ``(y-y')(f(y)-f(y')) <= |y-y'| gamma(t) varrho(|y-y'|)`` on sampled pairs."""
    _check_budget(sample_budget)
    gamma = gamma or spec.coeffs.gamma
    modulus = modulus or spec.varrho
    if modulus is None:
        raise ValueError("H2 needs a monotonicity modulus")
    rng = np.random.default_rng(seed)
    n = sample_budget
    t, y, z, u = _sample(rng, box, n, spec.brownian_dim, spec.m)
    y2 = rng.uniform(*box.y, size=n)
    dy = y - y2
    lhs = dy * (spec(t, y, z, u) - spec(t, y2, z, u))
    rhs = np.abs(dy) * gamma(t) * modulus(np.abs(dy))
    excess = lhs - rhs
    bad = excess > tol * np.abs(rhs) + ABS_TOL
    i = int(np.argmax(excess))
    witness = None
    if bad.any():
        witness = {"x": _point(t[i], y[i], z[i], u[i]), "x_prime": _point(t[i], y2[i], z[i], u[i]),
                   "lhs": float(lhs[i]), "rhs": float(rhs[i])}
    return ValidationReport("H2", "FAIL" if bad.any() else "PASS", float(excess[i]), n, witness,
                            notes={"osgood": modulus.osgood, "concave": modulus.concave})


def validate_growth_H1(spec: GeneratorSpec, f_t=None, coeffs=None, sample_budget: int = 4096,
                       box: Box = Box(), seed: int = 0, tol: float = 1e-9) -> ValidationReport:
    """Check ``|f| <= f_t + gamma |y| + rho |z| + sigma |u|_lambda`` at sampled points."""
    _check_budget(sample_budget)
    if f_t is not None or coeffs is not None:
        spec = replace(spec, growth=f_t if f_t is not None else spec.growth, coeffs=coeffs or spec.coeffs)
    rng = np.random.default_rng(seed)
    n = sample_budget
    t, y, z, u = _sample(rng, box, n, spec.brownian_dim, spec.m)
    lhs = np.abs(spec(t, y, z, u))
    rhs = spec.growth_bound(t, y, z, u)
    excess = lhs - rhs
    bad = excess > tol * np.abs(rhs) + ABS_TOL
    i = int(np.argmax(excess))
    witness = None
    if bad.any():
        witness = {"x": _point(t[i], y[i], z[i], u[i]), "lhs": float(lhs[i]), "rhs": float(rhs[i])}
    return ValidationReport("H1", "FAIL" if bad.any() else "PASS", float(excess[i]), n, witness)


def lemma_phi_bound(psi: Callable, K: float, n: float, x_samples) -> ValidationReport:
    """Check ``psi(x) <= n x + psi(2K/n)`` for a nondecreasing ``psi`` with ``psi(x) <= K (x+1)``."""
    if K <= 0:
        raise ValueError("growth constant K must be positive")
    if n < 2 * K:
        raise ValueError("the bound needs n >= 2K")
    x = np.asarray(x_samples, dtype=float)
    if np.any(x < 0):
        raise ValueError("samples must be nonnegative")
    px = np.asarray(psi(x), dtype=float)
    growth_ok = bool(np.all(px <= K * (x + 1) + ABS_TOL))
    rhs = n * x + float(psi(2 * K / n))
    excess = px - rhs
    bad = excess > ABS_TOL
    i = int(np.argmax(excess))
    witness = {"x": float(x[i]), "lhs": float(px[i]), "rhs": float(rhs[i])} if bad.any() else None
    return ValidationReport("lemma_phi", "FAIL" if bad.any() else "PASS", float(excess[i]), x.size, witness,
                            notes={"growth_ok": growth_ok})


def validate_declared(spec: GeneratorSpec, sample_budget: int = 4096, box: Box = Box(),
                      seed: int = 0) -> list[ValidationReport]:
    """Run the checks implied by the driver's declared assumption class."""
    cls = spec.assumption_class
    out: list[ValidationReport] = []
    if cls == "A":
        out.append(validate_lipschitz_A2(spec, sample_budget=sample_budget, box=box, seed=seed))
    if cls in ("H1",):
        out.append(validate_growth_H1(spec, sample_budget=sample_budget, box=box, seed=seed))
    if cls in ("H2", "H3"):
        out.append(validate_weak_monotone_H2(spec, sample_budget=sample_budget, box=box, seed=seed))
    if cls in ("A", "H2", "H3") and spec.m and spec.kernel is not None:
        out.append(validate_jump_monotone_A3(spec, sample_budget=sample_budget, box=box, seed=seed + 1))
    if spec.growth is not None and cls != "H1":
        out.append(validate_growth_H1(spec, sample_budget=sample_budget, box=box, seed=seed + 2))
    return out
