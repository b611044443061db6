"""Driver specification: expression, declared bounds and assumption class."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..noise import MarkSpace
from .coefficients import CoefficientFn, CoefficientFns, Modulus, constant
from .expr import Env, Expr

__all__ = ["JumpKernel", "GeneratorSpec", "eval_generator", "ASSUMPTION_CLASSES"]

ASSUMPTION_CLASSES = ("A", "H1", "H2", "H3")


@dataclass(frozen=True)
class JumpKernel:
    """``beta_t(e)`` with ``c (1 ^ |e|) <= beta <= C (1 ^ |e|)`` and ``-1 < c <= 0``.

    ``beta`` is vectorised in ``(t, e)``.  The default is
    ``beta_t(e) = scale * time_factor(t) * (1 ^ |e|)``.
    """

    c: float
    C: float
    beta: Callable = None
    description: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not -1 < self.c <= 0:
            raise ValueError("kernel lower constant c must satisfy -1 < c <= 0")
        if not self.C > 0:
            raise ValueError("kernel upper constant C must be positive")
        if self.beta is None:
            raise ValueError("kernel needs a beta function")

    @classmethod
    def scaled(cls, scale: float, c: float, C: float, time_factor: CoefficientFn | None = None) -> JumpKernel:
        tf = time_factor or constant(1.0)

        def beta(t, e):
            return scale * tf(t) * np.minimum(1.0, np.abs(e))

        desc = {"scale": scale, "c": c, "C": C, "time_factor": tf.to_json()}
        return cls(c=c, C=C, beta=beta, description=desc)

    @classmethod
    def constant(cls, value: float, C: float | None = None) -> JumpKernel:
        """``beta_t(e) = value`` for every mark; the bounds assume ``|e| >= 1`` unless ``C`` is given."""
        value = float(value)

        def beta(t, e):
            return np.full(np.broadcast_shapes(np.shape(t), np.shape(e)), value)

        C = max(value, 1e-300) if C is None else C
        return cls(c=min(value, 0.0), C=C, beta=beta, description={"constant": value, "C": C})

    def __call__(self, t, e):
        return self.beta(t, e)

    def check_bounds(self, nodes, marks: MarkSpace, tol: float = 1e-12) -> None:
        if marks.size == 0:
            return
        t = np.asarray(nodes, dtype=float)[:, None]
        e = marks.e[None, :]
        b = self.beta(t, e)
        cap = np.minimum(1.0, np.abs(e))
        if np.any(b < self.c * cap - tol) or np.any(b > self.C * cap + tol):
            raise ValueError("jump kernel beta violates c (1 ^ |e|) <= beta <= C (1 ^ |e|) on the grid")


@dataclass(frozen=True)
class GeneratorSpec:
    """An evaluable driver with its declared structural data.

    ``growth`` is the nonnegative process ``f_t`` of the linear-growth bound,
    housed as an expression in ``t`` only.  ``varrho`` and ``phi`` are the
    monotonicity and continuity moduli used by the H2/H3 classes.
    """

    expr: Expr
    coeffs: CoefficientFns = field(default_factory=CoefficientFns)
    marks: MarkSpace = field(default_factory=MarkSpace)
    brownian_dim: int = 1
    kernel: JumpKernel | None = None
    assumption_class: str = "A"
    growth: Expr | None = None
    varrho: Modulus | None = None
    phi: Modulus | None = None

    def __post_init__(self):
        if self.assumption_class not in ASSUMPTION_CLASSES:
            raise ValueError(f"assumption_class must be one of {ASSUMPTION_CLASSES}")
        if self.expr.max_index("u") >= self.marks.size:
            raise ValueError(
                f"arity mismatch: driver reads u index {self.expr.max_index('u')} but there are {self.marks.size} marks"
            )
        if self.expr.max_index("z") >= self.brownian_dim:
            raise ValueError(
                f"arity mismatch: driver reads z index {self.expr.max_index('z')} but d = {self.brownian_dim}"
            )
        if self.expr.uses_kernel() and self.kernel is None:
            raise ValueError("driver uses u_beta but no jump kernel is declared")
        if self.growth is not None and not self.growth.variables() <= {"t"}:
            raise ValueError("growth process f_t must be an expression in t only")
        if self.assumption_class in ("H2", "H3"):
            for name in ("varrho", "phi"):
                mod = getattr(self, name)
                if mod is not None and not mod.concave:
                    raise ValueError(f"{name} must be concave for {self.assumption_class}-class drivers")
            if self.varrho is not None and not self.varrho.osgood:
                raise ValueError("varrho fails the Osgood condition int_0+ dr/varrho(r) = inf")

    @property
    def m(self) -> int:
        return self.marks.size

    def env(self, t, y, z, u) -> Env:
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        u = np.asarray(u, dtype=float)
        if z.ndim == 0:
            z = np.full(y.shape + (self.brownian_dim,), float(z))
        elif z.shape == y.shape and self.brownian_dim == 1:
            z = z[..., None]
        if self.m == 0:
            u = np.zeros(y.shape + (0,))
        elif u.ndim == 0:
            u = np.full(y.shape + (self.m,), float(u))
        elif u.shape == y.shape and self.m == 1:
            u = u[..., None]
        return Env(t=t, y=y, z=z, u=u, lam=self.marks.lam, marks=self.marks.e,
                   beta=None if self.kernel is None else self.kernel.beta)

    def __call__(self, t, y, z, u):
        """Vectorised evaluation (see :mod:`.expr` for the shape convention)."""
        return self.expr(self.env(t, y, z, u))

    def growth_bound(self, t, y, z, u):
        """``f_t + gamma |y| + rho |z| + sigma |u|_lambda``; needs ``growth``."""
        if self.growth is None:
            raise ValueError("no growth process declared")
        env = self.env(t, y, z, u)
        ft = self.growth(env)
        return (ft + self.coeffs.gamma(t) * np.abs(env.y)
                + self.coeffs.rho(t) * np.linalg.norm(env.z, axis=-1)
                + self.coeffs.sigma(t) * np.sqrt((env.u**2 * env.lam).sum(axis=-1)))

    def sup_coefficient(self, t) -> float:
        """Largest of gamma, rho, sigma at ``t`` (scalar)."""
        return float(max(self.coeffs.gamma(t), self.coeffs.rho(t), self.coeffs.sigma(t)))


def eval_generator(spec: GeneratorSpec, t: float, y: float, z, u) -> float:
    """Scalar evaluation of ``f(t, y, z, u)``; non-finite inputs are rejected."""
    zz = np.asarray(z, dtype=float)
    zz = np.full(spec.brownian_dim, float(zz)) if zz.ndim == 0 else zz
    uu = np.asarray(u, dtype=float) if spec.m else np.zeros(0)
    uu = np.full(spec.m, float(uu)) if uu.ndim == 0 else uu
    if not (np.isfinite(t) and np.isfinite(y) and np.all(np.isfinite(zz)) and np.all(np.isfinite(uu))):
        raise ValueError("generator arguments must be finite")
    return float(spec(float(t), np.float64(y), zz, uu))
