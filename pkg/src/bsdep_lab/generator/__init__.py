"""Drivers ``f(t, y, z, u)``: representation, validation and inf-convolution."""

from .coefficients import (AssumptionError, CoefficientFn, CoefficientFns, Modulus, constant, exp_decay,
                           parse_coefficient, parse_modulus, piecewise, power_decay)
from .expr import Expr, parse_expr
from .infconv import LipschitzApprox, PropertyReport, check_fn_properties, inf_convolution
from .spec import GeneratorSpec, JumpKernel, eval_generator
from .validate import (Box, ValidationReport, lemma_phi_bound, validate_declared, validate_growth_H1,
                       validate_jump_monotone_A3, validate_lipschitz_A2, validate_weak_monotone_H2)

__all__ = [
    "AssumptionError", "CoefficientFn", "CoefficientFns", "Modulus", "constant", "exp_decay", "power_decay",
    "piecewise", "parse_coefficient", "parse_modulus", "Expr", "parse_expr", "LipschitzApprox",
    "PropertyReport", "check_fn_properties", "inf_convolution", "GeneratorSpec", "JumpKernel",
    "eval_generator", "Box", "ValidationReport", "lemma_phi_bound", "validate_declared", "validate_growth_H1",
    "validate_jump_monotone_A3", "validate_lipschitz_A2", "validate_weak_monotone_H2",
]
