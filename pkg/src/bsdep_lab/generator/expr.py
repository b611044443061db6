"""Driver expressions ``f(t, y, z, u)`` as small immutable trees.

Evaluation is vectorised: ``y`` has some shape ``S``, ``z`` has shape
``S + (d,)`` and ``u`` has shape ``S + (m,)``; ``t`` broadcasts against ``S``.

JSON dialect (one node per object; bare numbers are constants, bare strings
``"t"`` and ``"y"`` are variables)::

    {"const": 2.0}
    {"var": "t"} | {"var": "y"} | {"var": "z", "index": 0} | {"var": "u", "index": 1}
    {"op": "u_int"}                       sum_i u_i lambda_i
    {"op": "u_int", "weights": [w_1..]}   sum_i w_i u_i lambda_i
    {"op": "u_beta"}                      sum_i u_i beta_t(e_i) lambda_i   (needs a kernel)
    {"op": "u_sq"}                        sum_i u_i^2 lambda_i
    {"op": "add" | "mul" | "min" | "max", "args": [...]}
    {"op": "sub", "args": [a, b]}
    {"op": "neg" | "abs" | "sin" | "cos" | "sqrt_abs", "args": [a]}
    {"op": "pow", "args": [a], "k": 3}
    {"op": "clamp", "args": [a], "lo": 0.0, "hi": 1.0}
    {"op": "coef", "fn": {"kind": "exp_decay", "a": 1.0, "b": 1.0}}
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .coefficients import CoefficientFn, parse_coefficient

__all__ = ["Expr", "Env", "parse_expr", "const", "T", "Y", "z", "u", "u_int", "u_beta", "u_sq",
           "coef", "absolute", "minimum", "maximum", "clamp", "sin", "cos", "sqrt_abs", "power"]

_UNARY = {"neg", "abs", "sin", "cos", "sqrt_abs", "pow", "clamp"}
_NARY = {"add", "mul", "min", "max"}


@dataclass(frozen=True)
class Env:
    """Evaluation context: arguments plus the mark space and jump kernel."""

    t: Any
    y: np.ndarray
    z: np.ndarray
    u: np.ndarray
    lam: np.ndarray
    marks: np.ndarray
    beta: Any = None


@dataclass(frozen=True)
class Expr:
    op: str
    args: tuple[Expr, ...] = ()
    value: float = 0.0
    index: int = 0
    lo: float = -np.inf
    hi: float = np.inf
    weights: tuple[float, ...] | None = None
    fn: CoefficientFn | None = None

    # -- building -------------------------------------------------------
    def __add__(self, other):
        return Expr("add", (self, _wrap(other)))

    def __radd__(self, other):
        return Expr("add", (_wrap(other), self))

    def __sub__(self, other):
        return Expr("sub", (self, _wrap(other)))

    def __rsub__(self, other):
        return Expr("sub", (_wrap(other), self))

    def __mul__(self, other):
        return Expr("mul", (self, _wrap(other)))

    def __rmul__(self, other):
        return Expr("mul", (_wrap(other), self))

    def __neg__(self):
        return Expr("neg", (self,))

    def __pow__(self, k: int):
        return power(self, k)

    # -- inspection -----------------------------------------------------
    def variables(self) -> frozenset[str]:
        """Names of the arguments the tree reads (``t``, ``y``, ``z0``.., ``u0``.. or ``u*``)."""
        if self.op in ("t", "y"):
            return frozenset({self.op})
        if self.op == "z":
            return frozenset({f"z{self.index}"})
        if self.op == "u":
            return frozenset({f"u{self.index}"})
        if self.op in ("u_int", "u_beta", "u_sq"):
            return frozenset({"u*"})
        if self.op == "coef":
            return frozenset({"t"})
        out = frozenset()
        for a in self.args:
            out |= a.variables()
        return out

    def max_index(self, var: str) -> int:
        """Largest index of ``z``/``u`` used, -1 if none."""
        own = self.index if self.op == var else -1
        if var == "u" and self.op == "u_int" and self.weights is not None:
            own = len(self.weights) - 1
        return max([own] + [a.max_index(var) for a in self.args])

    def uses_kernel(self) -> bool:
        return self.op == "u_beta" or any(a.uses_kernel() for a in self.args)

    # -- evaluation -----------------------------------------------------
    def __call__(self, env: Env):
        op = self.op
        if op == "const":
            return np.full(np.shape(env.y), self.value)
        if op == "t":
            return np.broadcast_to(np.asarray(env.t, dtype=float), np.shape(env.y)).astype(float)
        if op == "y":
            return env.y
        if op == "z":
            return env.z[..., self.index]
        if op == "u":
            return env.u[..., self.index]
        if op == "u_int":
            w = env.lam if self.weights is None else np.asarray(self.weights) * env.lam
            return (env.u * w).sum(axis=-1)
        if op == "u_sq":
            return (env.u**2 * env.lam).sum(axis=-1)
        if op == "u_beta":
            if env.beta is None:
                raise ValueError("u_beta used without a jump kernel")
            t = np.asarray(env.t, dtype=float)[..., None]
            return (env.u * env.beta(t, env.marks) * env.lam).sum(axis=-1)
        if op == "coef":
            return np.broadcast_to(self.fn(env.t), np.shape(env.y)).astype(float)
        vals = [a(env) for a in self.args]
        if op == "add":
            return sum(vals[1:], vals[0])
        if op == "mul":
            out = vals[0]
            for v in vals[1:]:
                out = out * v
            return out
        if op == "sub":
            return vals[0] - vals[1]
        if op == "min":
            return np.minimum.reduce(vals)
        if op == "max":
            return np.maximum.reduce(vals)
        x = vals[0]
        if op == "neg":
            return -x
        if op == "abs":
            return np.abs(x)
        if op == "sin":
            return np.sin(x)
        if op == "cos":
            return np.cos(x)
        if op == "sqrt_abs":
            return np.sqrt(np.abs(x))
        if op == "pow":
            return x**self.index
        if op == "clamp":
            return np.clip(x, self.lo, self.hi)
        raise ValueError(f"unknown op {op!r}")

    # -- serialisation --------------------------------------------------
    def to_json(self):
        op = self.op
        if op == "const":
            return self.value
        if op in ("t", "y"):
            return op
        if op in ("z", "u"):
            return {"var": op, "index": self.index}
        if op == "u_int":
            return {"op": "u_int"} if self.weights is None else {"op": "u_int", "weights": list(self.weights)}
        if op in ("u_beta", "u_sq"):
            return {"op": op}
        if op == "coef":
            return {"op": "coef", "fn": self.fn.to_json()}
        out = {"op": op, "args": [a.to_json() for a in self.args]}
        if op == "pow":
            out["k"] = self.index
        if op == "clamp":
            out["lo"], out["hi"] = self.lo, self.hi
        return out


def _wrap(x) -> Expr:
    return x if isinstance(x, Expr) else const(x)


def const(c: float) -> Expr:
    return Expr("const", value=float(c))


T = Expr("t")
Y = Expr("y")


def z(i: int = 0) -> Expr:
    return Expr("z", index=i)


def u(i: int = 0) -> Expr:
    return Expr("u", index=i)


def u_int(weights=None) -> Expr:
    return Expr("u_int", weights=None if weights is None else tuple(float(w) for w in weights))


def u_beta() -> Expr:
    return Expr("u_beta")


def u_sq() -> Expr:
    return Expr("u_sq")


def coef(fn: CoefficientFn) -> Expr:
    return Expr("coef", fn=fn)


def absolute(x) -> Expr:
    return Expr("abs", (_wrap(x),))


def minimum(*xs) -> Expr:
    return Expr("min", tuple(map(_wrap, xs)))


def maximum(*xs) -> Expr:
    return Expr("max", tuple(map(_wrap, xs)))


def clamp(x, lo=-np.inf, hi=np.inf) -> Expr:
    return Expr("clamp", (_wrap(x),), lo=float(lo), hi=float(hi))


def sin(x) -> Expr:
    return Expr("sin", (_wrap(x),))


def cos(x) -> Expr:
    return Expr("cos", (_wrap(x),))


def sqrt_abs(x) -> Expr:
    return Expr("sqrt_abs", (_wrap(x),))


def power(x, k: int) -> Expr:
    if int(k) != k or k < 0:
        raise ValueError("pow exponent must be a nonnegative integer")
    return Expr("pow", (_wrap(x),), index=int(k))


def parse_expr(node, path: str = "$") -> Expr:
    """Build an :class:`Expr` from the JSON dialect; errors carry a JSON path."""
    if isinstance(node, bool):
        raise ValueError(f"{path}: booleans are not expressions")
    if isinstance(node, (int, float)):
        return const(node)
    if isinstance(node, str):
        if node in ("t", "y"):
            return Expr(node)
        raise ValueError(f"{path}: unknown variable {node!r}")
    if not isinstance(node, dict):
        raise ValueError(f"{path}: expected an expression object")
    if "const" in node:
        _only(node, {"const"}, path)
        return const(node["const"])
    if "var" in node:
        _only(node, {"var", "index"}, path)
        name = node["var"]
        if name in ("t", "y"):
            return Expr(name)
        if name in ("z", "u"):
            idx = node.get("index", 0)
            if not isinstance(idx, int) or idx < 0:
                raise ValueError(f"{path}.index: must be a nonnegative integer")
            return Expr(name, index=idx)
        raise ValueError(f"{path}.var: unknown variable {name!r}")
    op = node.get("op")
    if op == "u_int":
        _only(node, {"op", "weights"}, path)
        return u_int(node.get("weights"))
    if op in ("u_beta", "u_sq"):
        _only(node, {"op"}, path)
        return Expr(op)
    if op == "coef":
        _only(node, {"op", "fn"}, path)
        return coef(parse_coefficient(node["fn"], f"{path}.fn", signed=True))
    if op in _NARY or op == "sub" or op in _UNARY:
        _only(node, {"op", "args", "k", "lo", "hi"}, path)
        args = node.get("args")
        if not isinstance(args, list) or not args:
            raise ValueError(f"{path}.args: expected a non-empty list")
        parsed = tuple(parse_expr(a, f"{path}.args[{i}]") for i, a in enumerate(args))
        if op == "sub" and len(parsed) != 2:
            raise ValueError(f"{path}.args: 'sub' takes exactly two arguments")
        if op in _UNARY and len(parsed) != 1:
            raise ValueError(f"{path}.args: {op!r} takes exactly one argument")
        if op == "pow":
            return power(parsed[0], node.get("k", 2))
        if op == "clamp":
            return clamp(parsed[0], node.get("lo", -np.inf), node.get("hi", np.inf))
        return Expr(op, parsed)
    raise ValueError(f"{path}: unknown expression node {node!r}")


def _only(node: dict, allowed: set, path: str) -> None:
    extra = set(node) - allowed
    if extra:
        raise ValueError(f"{path}: unknown keys {sorted(extra)}")
