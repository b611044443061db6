"""Experiment configuration: JSON schema, defaults and object construction."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

import jsonschema

from ..generator import (AssumptionError, CoefficientFns, GeneratorSpec, JumpKernel, parse_coefficient,
                         parse_expr, parse_modulus)
from ..generator.coefficients import ZERO
from ..girsanov import LinearBSDEPSpec
from ..noise import MarkSpace, TimeGrid
from ..solver import BSDEPProblem, RegressionBasis, Terminal
from ..solver.problem import G_FUNCTIONS

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "KINDS", "SCHEMA", "DEFAULTS"]

KINDS = ("solve", "picard", "minimal", "compare", "oracle", "validate", "infinite", "simulate")

DEFAULTS = {"steps": 50, "paths": 10_000, "degree": 2, "ridge": 1e-8, "dim": 1, "seed": 0,
            "n_se": 3.0, "rel_tol": 0.01}


class ConfigError(ValueError):
    """Raised with one message per problem, each prefixed by a JSON path."""

    def __init__(self, errors: list[str]):
        super().__init__("invalid config:\n  " + "\n  ".join(errors))
        self.errors = errors


_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_COEF = {"oneOf": [_NUM, {"type": "object", "required": ["kind"]}]}
_EXPR: dict = {}  # checked by the expression parser, which reports its own paths


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_TERMINAL = {
    "oneOf": [
        _NUM,
        _obj({"kind": {"const": "constant"}, "value": _NUM}, ["kind", "value"]),
        _obj({"kind": {"const": "brownian"}, "g": {"enum": sorted(G_FUNCTIONS)},
              "component": {"type": "integer", "minimum": 0}, "k": _NUM}, ["kind"]),
        _obj({"kind": {"const": "jump_count"}, "g": {"enum": sorted(G_FUNCTIONS)},
              "mark": {"type": ["integer", "null"], "minimum": 0}, "k": _NUM}, ["kind"]),
        _obj({"kind": {"const": "sum"},
              "terms": {"type": "array", "minItems": 1,
                        "items": _obj({"weight": _NUM, "terminal": {"$ref": "#/$defs/terminal"}},
                                      ["weight", "terminal"])}}, ["kind", "terms"]),
    ]
}

_KERNEL = _obj({"kind": {"enum": ["scaled", "constant"]}, "value": _NUM, "scale": _NUM,
                "c": _NUM, "C": _POS, "time_factor": _COEF}, ["kind"])

_GENERATOR = _obj({
    "expr": _EXPR,
    "coefficients": _obj({"gamma": _COEF, "rho": _COEF, "sigma": _COEF}),
    "class": {"enum": ["A", "H1", "H2", "H3"]},
    "kernel": _KERNEL,
    "growth": _EXPR,
    "varrho": {"type": "object"},
    "phi": {"type": "object"},
}, ["expr"])

_BOX = _obj({k: {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2} for k in ("t", "y", "z", "u")})

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "$defs": {"terminal": _TERMINAL, "generator": _GENERATOR},
    **_obj({
        "kind": {"enum": list(KINDS)},
        "problem": _obj({
            "horizon": {"oneOf": [_POS, {"const": "infinite"}]},
            "steps": {"type": "integer", "minimum": 1},
            "marks": {"type": "array", "items": _obj({"mark": _NUM, "intensity": _POS}, ["mark", "intensity"])},
            "terminal": {"$ref": "#/$defs/terminal"},
            "generator": {"$ref": "#/$defs/generator"},
            "truncations": {"type": "array", "items": _POS, "minItems": 1},
            "steps_per_unit": {"type": "integer", "minimum": 1},
        }),
        "ensemble": _obj({"paths": {"type": "integer", "minimum": 1}, "dim": {"type": "integer", "minimum": 1},
                          "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1}}),
        "solver": _obj({
            "basis": _obj({"degree": {"type": "integer", "minimum": 0}, "ridge": _NONNEG,
                           "brownian": {"type": "boolean"}, "jumps": {"type": "boolean"}}),
            "implicit_iterations": {"type": "integer", "minimum": 0, "maximum": 5},
            "picard": _obj({"max_iter": {"type": "integer", "minimum": 1}, "tol": _POS}),
            "n_list": {"type": "array", "items": _POS, "minItems": 1},
            "infconv": _obj({"search_box_radius": _POS, "coarse_points_per_axis": {"type": "integer", "minimum": 3},
                             "refinement_rounds": {"type": "integer", "minimum": 0}, "rounding": _NONNEG}),
        }),
        "compare": _obj({"generator": {"$ref": "#/$defs/generator"}, "terminal": {"$ref": "#/$defs/terminal"},
                         "slack": _NONNEG, "slack_se": _NONNEG, "expect": {"enum": ["PASS", "FAIL"]},
                         "min_fraction": {"type": "number", "minimum": 0, "maximum": 1}}),
        "oracle": _obj({"a": _COEF, "b": {"type": "array", "items": _COEF, "minItems": 1},
                        "alpha": _KERNEL, "phi": _COEF, "terminal": {"$ref": "#/$defs/terminal"}}),
        "validate": _obj({"checks": {"type": "array",
                                     "items": {"enum": ["declared", "A2", "A3", "H1", "H2", "fn_properties"]}},
                          "sample_budget": {"type": "integer", "minimum": 1}, "box": _BOX,
                          "seed": {"type": "integer", "minimum": 0}, "grid_tol": _POS, "slope_tol": _NONNEG,
                          "lipschitz_const": _POS}),
        "checks": _obj({"n_se": _NONNEG, "rel_tol": _NONNEG, "abs_tol": _NONNEG,
                        "expect_y0": _NUM, "expect_z": _NUM, "infinite_tol": _POS, "candidate": _EXPR,
                        "target_horizon": _POS}),
        "output": _obj({"dir": {"type": "string"}, "max_paths": {"type": ["integer", "null"], "minimum": 0}}),
    }, ["kind"]),
}

_VALIDATOR = jsonschema.Draft202012Validator(SCHEMA)


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    raw: dict = field(repr=False)
    problem: BSDEPProblem | None
    paths: int
    dim: int
    seed: int
    basis: RegressionBasis
    extra: dict = field(default_factory=dict, repr=False)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.raw).encode()).hexdigest()

    @property
    def output_dir(self) -> str:
        return self.raw.get("output", {}).get("dir", "out")

    def check(self, name: str, default=None):
        return self.raw.get("checks", {}).get(name, DEFAULTS.get(name, default))


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _resolve(raw: dict) -> dict:
    cfg = copy.deepcopy(raw)
    prob = cfg.setdefault("problem", {})
    if prob.get("horizon") != "infinite":
        prob.setdefault("horizon", 1.0)
        prob.setdefault("steps", DEFAULTS["steps"])
    prob.setdefault("marks", [])
    ens = cfg.setdefault("ensemble", {})
    ens.setdefault("paths", DEFAULTS["paths"])
    ens.setdefault("dim", DEFAULTS["dim"])
    ens.setdefault("seed", DEFAULTS["seed"])
    basis = cfg.setdefault("solver", {}).setdefault("basis", {})
    basis.setdefault("degree", DEFAULTS["degree"])
    basis.setdefault("ridge", DEFAULTS["ridge"])
    return cfg


def parse_terminal(node, path: str = "$") -> Terminal:
    if isinstance(node, (int, float)) and not isinstance(node, bool):
        return Terminal.constant(node)
    kind = node["kind"]
    if kind == "constant":
        return Terminal.constant(node["value"])
    if kind == "brownian":
        return Terminal.brownian(node.get("g", "identity"), node.get("component", 0), node.get("k", 0.0))
    if kind == "jump_count":
        return Terminal.jump_count(node.get("g", "identity"), node.get("mark"), node.get("k", 0.0))
    return Terminal.combination(*((t["weight"], parse_terminal(t["terminal"], f"{path}.terms[{i}].terminal"))
                                  for i, t in enumerate(node["terms"])))


def parse_kernel(node, path: str = "$") -> JumpKernel:
    try:
        if node["kind"] == "constant":
            return JumpKernel.constant(node.get("value", 0.0), node.get("C"))
        tf = parse_coefficient(node["time_factor"], f"{path}.time_factor") if "time_factor" in node else None
        return JumpKernel.scaled(node.get("scale", 1.0), node.get("c", 0.0), node.get("C", 1.0), tf)
    except (KeyError, ValueError) as exc:
        raise ValueError(f"{path}: {exc}") from None


def parse_generator(node: dict, marks: MarkSpace, d: int, path: str = "$") -> GeneratorSpec:
    co = node.get("coefficients", {})
    coeffs = CoefficientFns(**{k: parse_coefficient(co[k], f"{path}.coefficients.{k}") if k in co else ZERO
                               for k in ("gamma", "rho", "sigma")})
    kernel = parse_kernel(node["kernel"], f"{path}.kernel") if "kernel" in node else None
    try:
        return GeneratorSpec(
            expr=parse_expr(node["expr"], f"{path}.expr"),
            coeffs=coeffs,
            marks=marks,
            brownian_dim=d,
            kernel=kernel,
            assumption_class=node.get("class", "A"),
            growth=parse_expr(node["growth"], f"{path}.growth") if "growth" in node else None,
            varrho=parse_modulus(node["varrho"], f"{path}.varrho") if "varrho" in node else None,
            phi=parse_modulus(node["phi"], f"{path}.phi") if "phi" in node else None,
        )
    except AssumptionError:
        raise
    except ValueError as exc:
        msg = str(exc)
        raise ValueError(msg if msg.startswith("$") else f"{path}: {msg}") from None


def parse_config(source: str | bytes | dict) -> ExperimentConfig:
    """Validate and resolve a config; raises :class:`ConfigError` listing every problem found."""
    if isinstance(source, (str, bytes)):
        try:
            raw = json.loads(source)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"$: JSON syntax error at line {exc.lineno} column {exc.colno}: {exc.msg}"]) from None
    else:
        raw = source
    if not isinstance(raw, dict):
        raise ConfigError(["$: config must be a JSON object"])
    errors = sorted(_VALIDATOR.iter_errors(raw), key=lambda e: e.json_path)
    if errors:
        raise ConfigError([f"{e.json_path}: {e.message}" for e in errors])
    cfg = _resolve(raw)
    try:
        return _build(cfg)
    except AssumptionError as exc:
        raise ConfigError([f"$.problem.generator.coefficients: {exc}"]) from None
    except (ValueError, KeyError) as exc:
        msg = str(exc)
        raise ConfigError([msg if msg.startswith("$") else f"$: {msg}"]) from None


def _build(cfg: dict) -> ExperimentConfig:
    kind = cfg["kind"]
    prob, ens, solver = cfg["problem"], cfg["ensemble"], cfg["solver"]
    marks = MarkSpace.from_pairs((m["mark"], m["intensity"]) for m in prob["marks"])
    d = ens["dim"]
    basis = RegressionBasis(**solver["basis"])
    extra: dict[str, Any] = {}
    infinite = prob.get("horizon") == "infinite"
    if infinite and kind != "infinite":
        raise ValueError("$.problem.horizon: 'infinite' is only valid for kind 'infinite'")
    if kind == "infinite" and not infinite:
        raise ValueError("$.problem.horizon: kind 'infinite' needs horizon 'infinite'")

    if kind == "oracle":
        oc = cfg.get("oracle")
        if oc is None:
            raise ValueError("$.oracle: required for kind 'oracle'")
        b = tuple(parse_coefficient(x, f"$.oracle.b[{i}]", signed=True) for i, x in enumerate(oc.get("b", [0.0] * d)))
        if len(b) != d:
            raise ValueError(f"$.oracle.b: has {len(b)} components but d = {d}")
        lin = LinearBSDEPSpec(
            a=parse_coefficient(oc.get("a", 0.0), "$.oracle.a", signed=True),
            b=b,
            alpha=parse_kernel(oc["alpha"], "$.oracle.alpha") if "alpha" in oc else None,
            phi=parse_coefficient(oc.get("phi", 0.0), "$.oracle.phi", signed=True),
            terminal=parse_terminal(oc.get("terminal", prob.get("terminal", 0.0)), "$.oracle.terminal"),
            marks=marks,
        )
        grid = TimeGrid(float(prob["horizon"]), prob["steps"])
        lin.validate(grid)
        extra["linear"] = lin
        problem = BSDEPProblem(lin.terminal, lin.to_generator(), grid, marks)
    elif kind == "simulate":
        problem = None
        extra["grid"] = TimeGrid(float(prob["horizon"]), prob["steps"])
    else:
        if "generator" not in prob:
            raise ValueError(f"$.problem.generator: required for kind {kind!r}")
        spec = parse_generator(prob["generator"], marks, d, "$.problem.generator")
        terminal = parse_terminal(prob.get("terminal", 0.0), "$.problem.terminal")
        if infinite:
            tr = prob.get("truncations")
            if not tr:
                raise ValueError("$.problem.truncations: required for an infinite horizon")
            target = cfg.get("checks", {}).get("target_horizon", tr[-1])
            if target not in tr:
                raise ValueError("$.checks.target_horizon: must be one of the truncations")
            extra["target_horizon"] = float(target)
            spu = prob.get("steps_per_unit", 100)
            extra["steps_per_unit"] = spu
            grid = TimeGrid(float(tr[0]), max(1, round(tr[0] * spu)))
            problem = BSDEPProblem(terminal, spec, grid, marks, "truncated_infinite", tuple(tr))
        else:
            grid = TimeGrid(float(prob["horizon"]), prob["steps"])
            problem = BSDEPProblem(terminal, spec, grid, marks)
        if kind == "compare":
            cc = cfg.get("compare")
            if cc is None or "generator" not in cc:
                raise ValueError("$.compare.generator: required for kind 'compare'")
            spec2 = parse_generator(cc["generator"], marks, d, "$.compare.generator")
            term2 = parse_terminal(cc.get("terminal", prob.get("terminal", 0.0)), "$.compare.terminal")
            extra["problem2"] = BSDEPProblem(term2, spec2, grid, marks)
        if kind == "minimal" and spec.growth is None:
            raise ValueError("$.problem.generator.growth: minimal solutions need a growth process")
        if "candidate" in cfg.get("checks", {}):
            cand = parse_expr(cfg["checks"]["candidate"], "$.checks.candidate")
            if not cand.variables() <= {"t"}:
                raise ValueError("$.checks.candidate: must be an expression in t only")
            extra["candidate"] = GeneratorSpec(cand, marks=marks, brownian_dim=d)
        if kind == "picard" and spec.assumption_class != "A":
            raise ValueError("$.problem.generator.class: Picard iteration needs class 'A'")
    n_list = solver.get("n_list", [1, 2, 4, 8])
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("$.solver.n_list: must be strictly increasing")
    return ExperimentConfig(kind=kind, raw=cfg, problem=problem, paths=ens["paths"], dim=d, seed=ens["seed"],
                            basis=basis, extra=extra)
