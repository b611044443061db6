"""Closed-form time coefficients and moduli of continuity."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CoefficientFn",
    "CoefficientFns",
    "Modulus",
    "AssumptionError",
    "constant",
    "exp_decay",
    "power_decay",
    "piecewise",
    "parse_coefficient",
    "parse_modulus",
]


class AssumptionError(ValueError):
    """A structural assumption on the data (e.g. the integrability of the coefficients) fails."""


@dataclass(frozen=True)
class CoefficientFn:
    """A scalar function of time from a small closed-form family.

    kinds and params:
      ``constant``     value                      -> value
      ``exp_decay``    a, b                       -> a * exp(-b t)
      ``power_decay``  a, p                       -> a * (1 + t) ** (-p)
      ``piecewise``    breaks (t_0=0 < t_1 ...), values -> values[j] on [t_j, t_{j+1})
    """

    kind: str
    params: tuple = ()

    def __post_init__(self):
        p = dict(self.params)
        if self.kind == "constant":
            _need(p, "value")
        elif self.kind == "exp_decay":
            _need(p, "a", "b")
            if p["b"] < 0:
                raise ValueError("exp_decay needs b >= 0")
        elif self.kind == "power_decay":
            _need(p, "a", "p")
            if p["p"] < 0:
                raise ValueError("power_decay needs p >= 0")
        elif self.kind == "piecewise":
            _need(p, "breaks", "values")
            br, vals = tuple(map(float, p["breaks"])), tuple(map(float, p["values"]))
            if len(br) != len(vals) or not br or br[0] != 0.0 or any(b1 <= b0 for b0, b1 in zip(br, br[1:])):
                raise ValueError("piecewise needs increasing breaks starting at 0, one value per break")
            p["breaks"], p["values"] = br, vals
        else:
            raise ValueError(f"unknown coefficient kind {self.kind!r}")
        object.__setattr__(self, "params", tuple(sorted(p.items())))

    @property
    def p(self) -> dict:
        return dict(self.params)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        p = self.p
        if self.kind == "constant":
            return np.full_like(t, p["value"], dtype=float)
        if self.kind == "exp_decay":
            return p["a"] * np.exp(-p["b"] * t)
        if self.kind == "power_decay":
            return p["a"] * (1.0 + t) ** (-p["p"])
        idx = np.searchsorted(np.asarray(p["breaks"]), t, side="right") - 1
        return np.asarray(p["values"])[np.clip(idx, 0, None)]

    def squared(self) -> CoefficientFn:
        p = self.p
        if self.kind == "constant":
            return constant(p["value"] ** 2)
        if self.kind == "exp_decay":
            return exp_decay(p["a"] ** 2, 2 * p["b"])
        if self.kind == "power_decay":
            return power_decay(p["a"] ** 2, 2 * p["p"])
        return piecewise(p["breaks"], [v * v for v in p["values"]])

    def absolute(self) -> CoefficientFn:
        p = self.p
        if self.kind == "constant":
            return constant(abs(p["value"]))
        if self.kind in ("exp_decay", "power_decay"):
            return CoefficientFn(self.kind, tuple({**p, "a": abs(p["a"])}.items()))
        return piecewise(p["breaks"], [abs(v) for v in p["values"]])

    def integral(self, t0: float, t1: float = math.inf) -> float:
        """Closed-form ``int_{t0}^{t1}``; ``inf`` when divergent."""
        if t1 <= t0:
            return 0.0
        p = self.p
        if self.kind == "constant":
            v = p["value"]
            if math.isinf(t1):
                return 0.0 if v == 0 else math.copysign(math.inf, v)
            return v * (t1 - t0)
        if self.kind == "exp_decay":
            a, b = p["a"], p["b"]
            if a == 0:
                return 0.0
            if b == 0:
                return math.copysign(math.inf, a) if math.isinf(t1) else a * (t1 - t0)
            hi = 0.0 if math.isinf(t1) else math.exp(-b * t1)
            return a / b * (math.exp(-b * t0) - hi)
        if self.kind == "power_decay":
            a, q = p["a"], p["p"]
            if a == 0:
                return 0.0
            if q == 1:
                if math.isinf(t1):
                    return math.copysign(math.inf, a)
                return a * (math.log1p(t1) - math.log1p(t0))
            if math.isinf(t1):
                if q < 1:
                    return math.copysign(math.inf, a)
                return a * (1 + t0) ** (1 - q) / (q - 1)
            return a * ((1 + t1) ** (1 - q) - (1 + t0) ** (1 - q)) / (1 - q)
        br, vals = p["breaks"], p["values"]
        total = 0.0
        for j, v in enumerate(vals):
            lo = max(br[j], t0)
            hi = min(br[j + 1] if j + 1 < len(br) else math.inf, t1)
            if hi > lo:
                if math.isinf(hi):
                    if v != 0:
                        return math.copysign(math.inf, v)
                else:
                    total += v * (hi - lo)
        return total

    def sup_abs(self) -> float:
        """``sup_{t >= 0} |g(t)|``; every kind is bounded on the half-line."""
        p = self.p
        if self.kind == "constant":
            return abs(p["value"])
        if self.kind in ("exp_decay", "power_decay"):
            return abs(p["a"])
        return max(abs(v) for v in p["values"])

    def min_on(self, t0: float, t1: float) -> float:
        t = np.linspace(t0, t1, 257)
        extra = [b for b in self.p.get("breaks", ()) if t0 <= b <= t1]
        return float(np.min(self(np.concatenate([t, extra]))))

    def to_json(self) -> dict:
        p = {k: list(v) if isinstance(v, tuple) else v for k, v in self.params}
        return {"kind": self.kind, **p}


def _need(p, *names):
    for n in names:
        if n not in p:
            raise ValueError(f"missing parameter {n!r}")


def constant(value: float) -> CoefficientFn:
    return CoefficientFn("constant", (("value", float(value)),))


def exp_decay(a: float, b: float) -> CoefficientFn:
    return CoefficientFn("exp_decay", (("a", float(a)), ("b", float(b))))


def power_decay(a: float, p: float) -> CoefficientFn:
    return CoefficientFn("power_decay", (("a", float(a)), ("p", float(p))))


def piecewise(breaks, values) -> CoefficientFn:
    return CoefficientFn("piecewise", (("breaks", tuple(breaks)), ("values", tuple(values))))


ZERO = constant(0.0)


@dataclass(frozen=True)
class CoefficientFns:
    """The nonnegative bounds ``gamma``, ``rho``, ``sigma`` on the driver's sensitivities."""

    gamma: CoefficientFn = ZERO
    rho: CoefficientFn = ZERO
    sigma: CoefficientFn = ZERO

    def __post_init__(self):
        for name in ("gamma", "rho", "sigma"):
            fn = getattr(self, name)
            # each family keeps one sign between breaks, so a sampled scan catches negativity
            if fn.min_on(0.0, 1e3) < 0 or fn(0.0) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def integrability(self, t0: float = 0.0, t1: float = math.inf) -> float:
        """``int (gamma + rho^2 + sigma^2) ds`` over ``[t0, t1]``."""
        return (self.gamma.integral(t0, t1) + self.rho.squared().integral(t0, t1)
                + self.sigma.squared().integral(t0, t1))

    def check_integrable(self, horizon: float) -> None:
        """Raise :class:`AssumptionError` unless the integrability condition holds on ``[0, horizon]``."""
        parts = {
            "gamma": self.gamma.integral(0.0, horizon),
            "rho^2": self.rho.squared().integral(0.0, horizon),
            "sigma^2": self.sigma.squared().integral(0.0, horizon),
        }
        bad = [k for k, v in parts.items() if not math.isfinite(v)]
        if bad:
            raise AssumptionError(
                f"(A4) integrability fails: int_0^{horizon} of {', '.join(bad)} diverges"
            )


@dataclass(frozen=True)
class Modulus:
    """Nondecreasing modulus ``x -> m(x)`` with ``m(0) = 0``.

    kinds: ``linear`` (k x), ``power`` (k x**alpha, 0 < alpha <= 1) and
    ``xlog`` (k x ln(1/x) on [0, delta], continued by its tangent line;
    ``0 < delta < 1/e``).
    """

    kind: str
    k: float = 1.0
    alpha: float = 1.0
    delta: float = 0.25

    def __post_init__(self):
        if self.k <= 0:
            raise ValueError("modulus scale k must be positive")
        if self.kind == "power" and not 0 < self.alpha <= 1:
            raise ValueError("power modulus needs 0 < alpha <= 1")
        if self.kind == "xlog" and not 0 < self.delta < 1 / math.e:
            raise ValueError("xlog modulus needs 0 < delta < 1/e")
        if self.kind not in ("linear", "power", "xlog"):
            raise ValueError(f"unknown modulus kind {self.kind!r}")

    def __call__(self, x):
        x = np.abs(np.asarray(x, dtype=float))
        if self.kind == "linear":
            return self.k * x
        if self.kind == "power":
            return self.k * x**self.alpha
        d = self.delta
        with np.errstate(divide="ignore", invalid="ignore"):
            small = np.where(x > 0, -x * np.log(np.where(x > 0, x, 1.0)), 0.0)
        slope = -math.log(d) - 1.0
        large = -d * math.log(d) + slope * (x - d)
        return self.k * np.where(x <= d, small, large)

    @property
    def growth_constant(self) -> float:
        """A ``K`` with ``m(x) <= K (x + 1)`` for all ``x >= 0``."""
        if self.kind in ("linear", "power"):
            return self.k
        # beyond delta the tangent line is slope * x + delta
        d = self.delta
        return self.k * max(-math.log(d) - 1.0, d)

    @property
    def osgood(self) -> bool:
        """Whether ``int_{0+} dr / m(r)`` diverges; decided by the form near 0."""
        return self.kind in ("linear", "xlog") or (self.kind == "power" and self.alpha >= 1)

    @property
    def concave(self) -> bool:
        return True

    def to_json(self) -> dict:
        out = {"kind": self.kind, "k": self.k}
        if self.kind == "power":
            out["alpha"] = self.alpha
        if self.kind == "xlog":
            out["delta"] = self.delta
        return out


_COEF_KEYS = {
    "constant": {"value"},
    "exp_decay": {"a", "b"},
    "power_decay": {"a", "p"},
    "piecewise": {"breaks", "values"},
}


def parse_coefficient(node, path: str = "$", signed: bool = False) -> CoefficientFn:
    """``{"kind": ..., params...}`` or a bare number (constant) -> :class:`CoefficientFn`."""
    if isinstance(node, (int, float)) and not isinstance(node, bool):
        fn = constant(node)
    elif isinstance(node, dict) and node.get("kind") in _COEF_KEYS:
        kind = node["kind"]
        extra = set(node) - _COEF_KEYS[kind] - {"kind"}
        if extra:
            raise ValueError(f"{path}: unknown keys {sorted(extra)}")
        try:
            fn = CoefficientFn(kind, tuple((k, v) for k, v in node.items() if k != "kind"))
        except ValueError as exc:
            raise ValueError(f"{path}: {exc}") from None
    else:
        raise ValueError(f"{path}: expected a number or a coefficient object with kind in {sorted(_COEF_KEYS)}")
    if not signed and fn.min_on(0.0, 1e3) < 0:
        raise ValueError(f"{path}: coefficient must be nonnegative")
    return fn


def parse_modulus(node, path: str = "$") -> Modulus:
    if not isinstance(node, dict) or "kind" not in node:
        raise ValueError(f"{path}: expected a modulus object with a kind")
    extra = set(node) - {"kind", "k", "alpha", "delta"}
    if extra:
        raise ValueError(f"{path}: unknown keys {sorted(extra)}")
    try:
        return Modulus(**node)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{path}: {exc}") from None
