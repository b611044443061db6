import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsdep_lab.generator import (AssumptionError, Box, CoefficientFns, GeneratorSpec, JumpKernel, LipschitzApprox,
                                 Modulus, check_fn_properties, constant, eval_generator, exp_decay, inf_convolution,
                                 lemma_phi_bound, parse_coefficient, parse_expr, parse_modulus, piecewise,
                                 power_decay, validate_declared, validate_growth_H1, validate_jump_monotone_A3,
                                 validate_lipschitz_A2, validate_weak_monotone_H2)
from bsdep_lab.generator.expr import (T, Y, absolute, clamp, coef, const, cos, maximum, minimum, power, sin,
                                      sqrt_abs, u, u_beta, u_int, u_sq, z)
from bsdep_lab.noise import MarkSpace

ONE_MARK = MarkSpace.from_pairs([(1.0, 1.0)])


class TestCoefficients:
    @pytest.mark.parametrize("fn, t0, t1, expected", [
        (constant(2.0), 0.0, 3.0, 6.0),
        (exp_decay(1.0, 1.0), 0.0, math.inf, 1.0),
        (exp_decay(2.0, 0.5), 1.0, 2.0, 4.0 * (math.exp(-0.5) - math.exp(-1.0))),
        (power_decay(1.0, 2.0), 0.0, math.inf, 1.0),
        (power_decay(1.0, 1.0), 0.0, math.e - 1, 1.0),
        (piecewise([0.0, 1.0], [2.0, 0.0]), 0.0, math.inf, 2.0),
    ])
    def test_closed_form_integrals(self, fn, t0, t1, expected):
        assert fn.integral(t0, t1) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("fn", [constant(1.0), power_decay(1.0, 0.5), power_decay(1.0, 1.0),
                                    piecewise([0.0, 2.0], [0.0, 3.0])])
    def test_divergent_tails(self, fn):
        assert fn.integral(0.0) == math.inf

    @settings(max_examples=50)
    @given(st.floats(0.0, 5.0), st.floats(0.0, 5.0), st.floats(0.0, 5.0), st.floats(0.1, 3.0))
    def test_integral_is_additive(self, a, b, c, rate):
        lo, mid, hi = sorted((a, b, c))
        for fn in (exp_decay(1.3, rate), power_decay(0.7, rate), piecewise([0.0, 1.0, 2.5], [1.0, -2.0, 0.5])):
            assert fn.integral(lo, mid) + fn.integral(mid, hi) == pytest.approx(fn.integral(lo, hi), abs=1e-12)

    def test_integral_agrees_with_quadrature(self):
        t = np.linspace(0.0, 4.0, 400_001)
        for fn in (exp_decay(1.3, 0.7), power_decay(0.7, 1.5)):
            y = fn(t)
            trap = float(((y[1:] + y[:-1]) * np.diff(t)).sum() / 2)
            assert fn.integral(0.0, 4.0) == pytest.approx(trap, rel=1e-9)

    def test_a4_rejects_constant_gamma_on_half_line(self):
        with pytest.raises(AssumptionError, match="A4"):
            CoefficientFns(gamma=constant(1.0)).check_integrable(math.inf)
        CoefficientFns(gamma=constant(1.0)).check_integrable(5.0)

    def test_negative_coefficient_rejected(self):
        with pytest.raises(ValueError):
            CoefficientFns(gamma=constant(-1.0))

    def test_parse_coefficient(self):
        assert parse_coefficient(2.5)(0.3) == 2.5
        assert parse_coefficient({"kind": "exp_decay", "a": 1, "b": 2})(1.0) == pytest.approx(math.exp(-2))
        with pytest.raises(ValueError, match=r"\$\.gamma"):
            parse_coefficient({"kind": "exp_decay", "a": 1, "b": 2, "c": 3}, "$.gamma")
        with pytest.raises(ValueError):
            parse_coefficient(-1.0)

    def test_json_roundtrip(self):
        for fn in (constant(2.0), exp_decay(1.0, 0.5), power_decay(2.0, 1.5), piecewise([0, 1], [1, 2])):
            assert parse_coefficient(fn.to_json(), signed=True) == fn


class TestModulus:
    def test_osgood_whitelist(self):
        assert Modulus("linear", k=1.0).osgood
        assert Modulus("xlog", k=1.0, delta=0.1).osgood
        assert not Modulus("power", k=1.0, alpha=0.5).osgood

    def test_values(self):
        assert Modulus("power", k=2.0, alpha=0.5)(4.0) == pytest.approx(4.0)
        assert Modulus("linear", k=3.0)(0.0) == 0.0

    def test_parse(self):
        assert parse_modulus({"kind": "linear", "k": 2.0})(1.5) == pytest.approx(3.0)
        with pytest.raises(ValueError):
            parse_modulus({"kind": "cubic"})


class TestEvaluation:
    def test_affine(self):
        spec = GeneratorSpec(2 * Y + z(0) + u_int(), marks=ONE_MARK)
        assert eval_generator(spec, 0.0, 1.0, 1.0, 1.0) == 4.0

    def test_abs(self):
        assert eval_generator(GeneratorSpec(absolute(Y)), 0.0, -3.0, 0.0, 0.0) == 3.0

    def test_discounted(self):
        spec = GeneratorSpec(coef(exp_decay(1.0, 1.0)) * (1.0 - Y))
        assert eval_generator(spec, 0.0, 0.0, 0.0, 0.0) == 1.0
        assert eval_generator(spec, 1.0, 0.5, 0.0, 0.0) == pytest.approx(0.5 * math.exp(-1))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            eval_generator(GeneratorSpec(Y), 0.0, math.nan, 0.0, 0.0)
        with pytest.raises(ValueError):
            eval_generator(GeneratorSpec(Y), 0.0, 1.0, math.inf, 0.0)

    def test_all_operators(self):
        ms = MarkSpace.from_pairs([(0.5, 2.0), (2.0, 1.0)])
        kern = JumpKernel.scaled(1.0, 0.0, 1.0)
        expr = (sin(Y) + cos(z(0)) - sqrt_abs(u(1)) + minimum(Y, 1.0) * maximum(z(0), -1.0)
                + clamp(T, 0.0, 0.5) + power(Y, 3) + u_sq() + u_beta() + u_int([1.0, -1.0]))
        spec = GeneratorSpec(expr, marks=ms, kernel=kern)
        y, zz, uu, t = 0.7, -0.3, np.array([1.5, -4.0]), 0.8
        want = (math.sin(y) + math.cos(zz) - 2.0 + min(y, 1) * max(zz, -1) + 0.5 + y**3
                + (1.5**2 * 2 + 16.0) + (1.5 * 0.5 * 2 - 4.0 * 1.0 * 1) + (1.5 * 2 + 4.0))
        assert eval_generator(spec, t, y, zz, uu) == pytest.approx(want, rel=1e-14)

    def test_vectorised_matches_scalar(self):
        spec = GeneratorSpec(sin(Y) * z(1) + absolute(u(0)), marks=ONE_MARK, brownian_dim=2)
        rng = np.random.default_rng(0)
        y, zz, uu = rng.normal(size=7), rng.normal(size=(7, 2)), rng.normal(size=(7, 1))
        vec = spec(0.3, y, zz, uu)
        assert np.allclose(vec, [eval_generator(spec, 0.3, y[i], zz[i], uu[i]) for i in range(7)])


class TestSpecInvariants:
    def test_u_arity_mismatch(self):
        with pytest.raises(ValueError, match="arity"):
            GeneratorSpec(u(2), marks=MarkSpace.from_pairs([(1.0, 1.0), (2.0, 1.0)]))

    def test_z_arity_mismatch(self):
        with pytest.raises(ValueError, match="arity"):
            GeneratorSpec(z(1), brownian_dim=1)

    def test_kernel_required_for_u_beta(self):
        with pytest.raises(ValueError, match="kernel"):
            GeneratorSpec(u_beta(), marks=ONE_MARK)

    def test_kernel_constants(self):
        with pytest.raises(ValueError):
            JumpKernel.scaled(1.0, -1.0, 1.0)
        with pytest.raises(ValueError):
            JumpKernel.scaled(1.0, 0.1, 1.0)
        with pytest.raises(ValueError):
            JumpKernel.scaled(1.0, 0.0, 0.0)

    def test_kernel_bound_check(self):
        JumpKernel.scaled(0.5, 0.0, 1.0).check_bounds(np.linspace(0, 1, 5), ONE_MARK)
        with pytest.raises(ValueError):
            JumpKernel.scaled(2.0, 0.0, 1.0).check_bounds(np.linspace(0, 1, 5), ONE_MARK)

    def test_h2_needs_osgood_varrho(self):
        with pytest.raises(ValueError, match="Osgood"):
            GeneratorSpec(sqrt_abs(Y), assumption_class="H2", varrho=Modulus("power", k=1.0, alpha=0.5))
        GeneratorSpec(-Y, assumption_class="H2", varrho=Modulus("linear", k=1.0))

    def test_growth_must_depend_on_t_only(self):
        with pytest.raises(ValueError):
            GeneratorSpec(Y, growth=absolute(Y))


class TestParseExpr:
    def test_error_paths(self):
        with pytest.raises(ValueError, match=r"\$\.args\[1\]"):
            parse_expr({"op": "add", "args": ["y", {"op": "nope"}]})
        with pytest.raises(ValueError, match="unknown keys"):
            parse_expr({"op": "abs", "args": ["y"], "extra": 1})
        with pytest.raises(ValueError):
            parse_expr({"op": "sub", "args": ["y"]})
        with pytest.raises(ValueError):
            parse_expr("w")

    exprs = st.recursive(
        st.one_of(st.floats(-3, 3).map(const), st.just(Y), st.just(T), st.just(z(0)), st.just(u(0)),
                  st.just(u_int()), st.just(u_sq())),
        lambda kids: st.one_of(
            st.tuples(kids, kids).map(lambda p: p[0] + p[1]),
            st.tuples(kids, kids).map(lambda p: p[0] * p[1]),
            st.tuples(kids, kids).map(lambda p: minimum(*p)),
            kids.map(absolute), kids.map(sin), kids.map(sqrt_abs), kids.map(lambda e: clamp(e, -1.0, 2.0)),
        ),
        max_leaves=8,
    )

    @settings(max_examples=60)
    @given(exprs, st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
    def test_json_roundtrip_preserves_values(self, e, y, zz, uu):
        spec = GeneratorSpec(e, marks=ONE_MARK)
        back = GeneratorSpec(parse_expr(e.to_json()), marks=ONE_MARK)
        assert eval_generator(back, 0.4, y, zz, uu) == eval_generator(spec, 0.4, y, zz, uu)


SMALL = 1500


class TestValidators:
    def test_a2_sine_plus_z_passes(self):
        spec = GeneratorSpec(sin(Y) + z(0), CoefficientFns(gamma=constant(1.0), rho=constant(1.0)))
        rep = validate_lipschitz_A2(spec, sample_budget=SMALL)
        assert rep.passed and rep.worst <= 1.0 + 1e-9

    @pytest.mark.parametrize("expr", [power(Y, 2), 2 * Y])
    def test_a2_fail_ships_rechecked_witness(self, expr):
        spec = GeneratorSpec(expr, CoefficientFns(gamma=constant(1.0)))
        rep = validate_lipschitz_A2(spec, sample_budget=SMALL, box=Box(y=(-10, 10)))
        assert not rep.passed
        w = rep.witness
        a = eval_generator(spec, w["x"]["t"], w["x"]["y"], w["x"]["z"], w["x"]["u"])
        b = eval_generator(spec, w["x_prime"]["t"], w["x_prime"]["y"], w["x_prime"]["z"], w["x_prime"]["u"])
        # gamma = 1 and rho = sigma = 0, so only the y distance counts
        assert abs(a - b) > abs(w["x"]["y"] - w["x_prime"]["y"])

    def test_a3(self):
        kern = JumpKernel.scaled(0.8, 0.0, 1.0)
        exact = GeneratorSpec(u_beta(), marks=ONE_MARK, kernel=kern)
        assert validate_jump_monotone_A3(exact, sigma=constant(1.0), sample_budget=SMALL).passed
        double = GeneratorSpec(2 * u_beta(), marks=ONE_MARK, kernel=kern)
        rep = validate_jump_monotone_A3(double, sigma=constant(1.0), sample_budget=SMALL)
        assert not rep.passed and rep.witness["lhs"] > rep.witness["rhs"]
        # the declared kernel is used for every pair, so a u-free driver passes only with beta = 0
        free = GeneratorSpec(sin(Y), marks=ONE_MARK, kernel=JumpKernel.constant(0.0, C=1.0))
        rep = validate_jump_monotone_A3(free, sigma=constant(1.0), sample_budget=SMALL)
        assert rep.passed and rep.notes["orders"] == "both"
        assert not validate_jump_monotone_A3(GeneratorSpec(sin(Y), marks=ONE_MARK, kernel=kern),
                                             sigma=constant(1.0), sample_budget=SMALL).passed

    def test_h2(self):
        lin = Modulus("linear", k=1.0)
        assert validate_weak_monotone_H2(GeneratorSpec(-power(Y, 3)), constant(1.0), lin, SMALL).passed
        assert validate_weak_monotone_H2(GeneratorSpec(Y), constant(1.0), lin, SMALL).passed
        root = Modulus("power", k=1.0, alpha=0.5)
        rep = validate_weak_monotone_H2(GeneratorSpec(sqrt_abs(Y)), constant(1.0), root, SMALL)
        assert rep.passed and rep.notes["osgood"] is False

    def test_h1(self):
        assert validate_growth_H1(GeneratorSpec(sin(Y)), f_t=const(1.0), sample_budget=SMALL).passed
        rep = validate_growth_H1(GeneratorSpec(power(Y, 2)), f_t=const(0.0),
                                 coeffs=CoefficientFns(gamma=constant(1.0)), sample_budget=SMALL)
        assert not rep.passed and rep.witness["lhs"] > rep.witness["rhs"]
        ed = exp_decay(1.0, 1.0)
        spec = GeneratorSpec(coef(ed) * (1.0 - Y), CoefficientFns(gamma=ed))
        assert validate_growth_H1(spec, f_t=coef(ed), sample_budget=SMALL).passed

    def test_degenerate_box_rejected(self):
        with pytest.raises(ValueError, match="degenerate"):
            Box(y=(1.0, 1.0))

    def test_budget_must_be_positive(self):
        with pytest.raises(ValueError):
            validate_lipschitz_A2(GeneratorSpec(Y), sample_budget=0)

    def test_declared_class_dispatch(self):
        spec = GeneratorSpec(power(Y, 2), CoefficientFns(gamma=constant(1.0)), assumption_class="A")
        reports = validate_declared(spec, sample_budget=SMALL)
        assert [r.check for r in reports] == ["A2"] and not reports[0].passed


class TestPhiBound:
    def test_linear(self):
        assert lemma_phi_bound(lambda x: x + 1, 1.0, 2, [0.0]).passed

    def test_equality_side(self):
        K, n = 1.5, 4.0
        assert lemma_phi_bound(lambda x: K * (x + 1), K, n, [2 * K / n]).passed

    def test_sweep(self):
        rep = lemma_phi_bound(lambda x: np.sqrt(x) + x, 1.0, 4, np.arange(0, 10.05, 0.1))
        assert rep.passed

    def test_needs_large_n(self):
        with pytest.raises(ValueError):
            lemma_phi_bound(lambda x: x, 1.0, 1.0, [1.0])


def _sq_fn(y, n):
    # inf_y' y'^2 + n |y - y'|
    return y * y if abs(y) <= n / 2 else n * abs(y) - n * n / 4


class TestInfConvolution:
    def test_abs_n1(self):
        assert inf_convolution(LipschitzApprox(GeneratorSpec(absolute(Y)), 1), 0.0, 2.0, 0.0, 0.0) == pytest.approx(2.0)

    @pytest.mark.parametrize("n, expected", [(2, 3.0), (4, 4.0)])
    def test_square(self, n, expected):
        approx = LipschitzApprox(GeneratorSpec(power(Y, 2)), n)
        assert inf_convolution(approx, 0.0, 2.0, 0.0, 0.0) == pytest.approx(expected, abs=1e-6)

    def test_sine_unchanged_when_n_exceeds_lipschitz(self):
        approx = LipschitzApprox(GeneratorSpec(sin(Y)), 2)
        assert inf_convolution(approx, 0.0, 0.5, 0.0, 0.0) == pytest.approx(math.sin(0.5), abs=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-4, 4), st.sampled_from([1, 2, 3, 8]))
    def test_square_closed_form(self, y, n):
        approx = LipschitzApprox(GeneratorSpec(power(Y, 2)), n)
        got = inf_convolution(approx, 0.0, y, 0.0, 0.0)
        assert got <= y * y
        assert got == pytest.approx(_sq_fn(y, n), abs=1e-6)

    def test_growth_radius_is_used(self):
        spec = GeneratorSpec(sqrt_abs(minimum(absolute(Y), 1.0)), growth=const(1.0), assumption_class="H1")
        approx = LipschitzApprox(spec, 4)
        assert inf_convolution(approx, 0.0, 0.0, 0.0, 0.0) == 0.0
        # sqrt is steeper than any n near 0: f_4(y) = 4|y| for |y| <= 1/64; the lattice lands
        # within ~1e-9 of y' = 0, which the square root magnifies
        got = inf_convolution(approx, 0.0, 0.01, 0.0, 0.0)
        assert 0.04 <= got <= 0.04 + 1e-4

    def test_jump_axis_uses_weighted_norm(self):
        ms = MarkSpace.from_pairs([(1.0, 4.0)])
        approx = LipschitzApprox(GeneratorSpec(absolute(u(0)), marks=ms), 1)
        # |u'| + 2 |u - u'| is minimised at u' = u
        assert inf_convolution(approx, 0.0, 0.0, 0.0, 3.0) == pytest.approx(3.0)
        # u_int reads u * lambda; f = 4|u|, distance 2|du|, so f_1(u) = 2|u|
        approx = LipschitzApprox(GeneratorSpec(absolute(u_int()), marks=ms), 1)
        assert inf_convolution(approx, 0.0, 0.0, 0.0, 3.0) == pytest.approx(6.0, abs=1e-6)

    def test_batch_matches_scalar(self):
        approx = LipschitzApprox(GeneratorSpec(power(Y, 2) + absolute(z(0))), 2)
        y, zz = np.array([0.3, 2.0, -3.0, 2.0]), np.array([0.1, -2.0, 1.0, -2.0])
        batch = approx(0.0, y, zz[:, None], 0.0)
        assert np.allclose(batch, [inf_convolution(approx, 0.0, a, b, 0.0) for a, b in zip(y, zz)])

    def test_bad_parameters(self):
        with pytest.raises(ValueError):
            LipschitzApprox(GeneratorSpec(Y), 0.5)
        with pytest.raises(ValueError):
            LipschitzApprox(GeneratorSpec(Y), 2, search_box_radius=0.0)


class TestPropertySuite:
    def test_square_driver(self):
        spec = GeneratorSpec(power(Y, 2), growth=const(25.0), assumption_class="H1")
        rep = check_fn_properties(spec, [1, 2, 4], sample_budget=300, box=Box(y=(-5, 5)))
        for item in ("below_f", "monotone_in_n", "lipschitz"):
            assert rep.items[item]["verdict"] == "PASS", item
        gaps = [rep.gaps[n] for n in (1, 2, 4)]
        assert gaps == sorted(gaps, reverse=True)

    def test_lipschitz_driver_has_zero_gap(self):
        spec = GeneratorSpec(sin(Y) + sin(z(0)), CoefficientFns(gamma=constant(1.0), rho=constant(1.0)))
        rep = check_fn_properties(spec, [1, 2], sample_budget=200, box=Box(y=(-5, 5), z=(-5, 5)))
        assert rep.passed
        assert rep.gaps[2] <= 1e-3

    def test_growth_item_skipped_without_growth(self):
        rep = check_fn_properties(GeneratorSpec(sin(Y)), [1, 2], sample_budget=50)
        assert rep.items["growth"]["verdict"] == "SKIPPED"
