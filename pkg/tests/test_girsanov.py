import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsdep_lab.generator import CoefficientFns, GeneratorSpec, JumpKernel, constant, eval_generator, exp_decay
from bsdep_lab.generator.expr import Y, sin, u_beta, z
from bsdep_lab.girsanov import (ExponentialMartingaleSpec, LinearBSDEPSpec, delta_quotients, doleans_dade,
                                doleans_dade_ensemble, girsanov_weights, linear_representation)
from bsdep_lab.noise import MarkSpace, NoisePath, TimeGrid, sample_ensemble
from bsdep_lab.solver import BSDEPProblem, BSDEPSolution, RegressionBasis, Terminal, pooled_se, solve_backward

GRID = TimeGrid(1.0, 50)
ONE = MarkSpace.from_pairs([(1.0, 1.0)])


def _em(theta=0.5, upsilon=0.5):
    return ExponentialMartingaleSpec((constant(theta),), JumpKernel.constant(upsilon) if upsilon is not None else None)


def _single_jump_path(w_total=0.25, jump_time=0.37, n=50):
    dW = np.full(n, w_total / n)
    return NoisePath(dW, [jump_time], [0])


def _literal(path, theta, upsilon, grid, lam):
    """exp(M_T - <M^c>_T / 2) * prod (1 + dM) exp(-dM), with M = theta W + upsilon * compensated count."""
    T = grid.horizon
    n_jumps = path.jump_times.size
    M_T = theta * path.brownian_increments.sum() + upsilon * (n_jumps - lam * T)
    jumps = np.prod([(1 + upsilon) * math.exp(-upsilon) for _ in range(n_jumps)])
    return math.exp(M_T - 0.5 * theta**2 * T) * jumps


class TestDoleansDade:
    def test_single_jump_hand_value(self):
        # theta W_T - theta^2 T / 2 = 0 on this path, leaving exp(-upsilon lam T) (1 + upsilon)
        val = doleans_dade(_single_jump_path(), _em(), GRID, ONE)
        assert abs(val - math.exp(-0.5) * 1.5) <= 1e-12

    def test_no_jump_path(self):
        path = NoisePath(np.zeros(50), [], [])
        assert doleans_dade(path, _em(), GRID, ONE) == pytest.approx(math.exp(-0.125 - 0.5), rel=1e-14)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(-1.0, 1.0), st.floats(-0.9, 2.0), st.floats(-1.0, 1.0),
           st.lists(st.floats(0.01, 1.0), max_size=4))
    def test_product_form_matches_literal(self, theta, upsilon, w_total, times):
        times = sorted(times)
        path = NoisePath(np.full(50, w_total / 50), times, [0] * len(times))
        got = doleans_dade(path, _em(theta, upsilon), GRID, ONE)
        assert got == pytest.approx(_literal(path, theta, upsilon, GRID, 1.0), rel=1e-12)

    def test_ensemble_agrees_with_per_path(self, small_jump_ens):
        spec = _em(0.3, -0.4)
        w = doleans_dade_ensemble(small_jump_ens, spec)
        for p in (0, 7, 1999):
            assert w[p] == pytest.approx(doleans_dade(small_jump_ens.path(p), spec, GRID, ONE), rel=1e-13)

    def test_cumulative(self, small_jump_ens):
        spec = _em()
        cum = doleans_dade_ensemble(small_jump_ens, spec, cumulative=True)
        assert cum.shape == (2000, 51) and np.all(cum[:, 0] == 1.0)
        assert np.allclose(cum[:, -1], doleans_dade_ensemble(small_jump_ens, spec), rtol=1e-13)

    def test_positive_near_minus_one(self, small_jump_ens):
        w = doleans_dade_ensemble(small_jump_ens, _em(2.0, -0.999))
        assert np.all(w > 0)

    def test_upsilon_at_minus_one_rejected(self, small_jump_ens):
        spec = ExponentialMartingaleSpec((constant(0.0),), JumpKernel(c=-0.5, C=1.0, beta=lambda t, e: -1.0 + 0 * e))
        with pytest.raises(ValueError, match="positive"):
            girsanov_weights(small_jump_ens, spec)

    def test_theta_bound_and_dimension(self, small_jump_ens):
        with pytest.raises(ValueError, match="bound"):
            girsanov_weights(small_jump_ens, ExponentialMartingaleSpec((constant(2.0),), theta_bound=1.0))
        with pytest.raises(ValueError, match="components"):
            doleans_dade_ensemble(small_jump_ens, ExponentialMartingaleSpec((constant(0.1), constant(0.1))))


class TestWeights:
    def test_unit_mean(self, jump_ens):
        rep = girsanov_weights(jump_ens, _em())
        assert abs(rep.mean - 1.0) <= 3 * rep.se
        assert rep.minimum > 0 and 0 < rep.ess <= jump_ens.n_paths

    def test_drift_transfer(self, jump_ens):
        # under the tilted measure W_T has mean theta T and N_T has mean (1 + upsilon) lam T
        w = girsanov_weights(jump_ens, _em(0.5, 0.5)).weights
        for x, target in ((jump_ens.W[:, -1, 0], 0.5), (jump_ens.counts_at_nodes[:, -1, 0], 1.5)):
            est = (w * x).sum() / w.sum()
            se = math.sqrt((w**2 * (x - est) ** 2).sum()) / w.sum()
            assert abs(est - target) <= 3 * se

    def test_unit_weights_without_tilt(self, jump_ens):
        rep = girsanov_weights(jump_ens, _em(0.0, None))
        assert np.all(rep.weights == 1.0) and rep.ess == pytest.approx(jump_ens.n_paths)


def _linear(a=0.0, b=0.0, alpha=None, phi=0.0, terminal=Terminal.constant(1.0), marks=MarkSpace()):
    kern = None if alpha is None else JumpKernel.constant(alpha, C=max(alpha, 1.0))
    return LinearBSDEPSpec(constant(a), (constant(b),), kern, constant(phi), terminal, marks)


class TestLinearOracle:
    def test_pure_discount(self, diffusion_ens):
        res = linear_representation(_linear(a=-1.0), diffusion_ens)
        assert abs(res.y - math.exp(-1)) <= 1e-12 and res.se <= 1e-15

    def test_running_cost(self, diffusion_ens):
        res = linear_representation(_linear(phi=1.0, terminal=Terminal.constant(0.0)), diffusion_ens)
        assert abs(res.y - 1.0) <= 1e-12

    def test_discounted_running_cost(self, diffusion_ens):
        # int_0^1 0.1 exp(-s/2) ds by the trapezoid rule, error O(dt^2)
        res = linear_representation(_linear(a=-0.5, phi=0.1, terminal=Terminal.constant(0.0)), diffusion_ens)
        assert res.y == pytest.approx(0.2 * (1 - math.exp(-0.5)), rel=1e-4)

    def test_brownian_drift(self, diffusion_ens):
        res = linear_representation(_linear(b=0.5, terminal=Terminal.brownian()), diffusion_ens)
        assert abs(res.y - 0.5) <= 3 * res.se

    def test_agrees_with_solver(self, jump_ens):
        spec = _linear(a=-0.5, b=0.3, alpha=0.2, phi=0.1, terminal=Terminal.brownian(), marks=ONE)
        orc = linear_representation(spec, jump_ens)
        sol = solve_backward(BSDEPProblem(spec.terminal, spec.to_generator(), GRID, ONE), jump_ens)
        assert abs(orc.y - sol.y0) <= 3 * math.hypot(orc.se, sol.y0_se)

    def test_interior_node(self, diffusion_ens):
        spec = _linear(b=0.5, terminal=Terminal.brownian())
        k = 20
        res = linear_representation(spec, diffusion_ens, k, RegressionBasis())
        exact = diffusion_ens.W[:, k, 0] + 0.5 * (1 - GRID.nodes[k])
        assert np.mean((res.estimates - exact) ** 2) < 1e-3
        with pytest.raises(ValueError, match="basis"):
            linear_representation(spec, diffusion_ens, k)

    def test_mismatched_ensemble(self, jump_ens):
        with pytest.raises(ValueError):
            linear_representation(_linear(), jump_ens)

    def test_generator_evaluates_the_linear_driver(self):
        spec = _linear(a=-0.5, b=0.3, alpha=0.2, phi=0.1, marks=ONE)
        gen = spec.to_generator()
        assert eval_generator(gen, 0.4, 2.0, 3.0, [5.0]) == pytest.approx(-1.0 + 0.9 + 0.2 * 5.0 + 0.1)

    def test_time_dependent_discount(self):
        spec = LinearBSDEPSpec(exp_decay(1.0, 1.0), (constant(0.0),), None, constant(0.0), Terminal.constant(1.0))
        assert spec.discount([0.0, 2.0]) == pytest.approx([1.0, math.exp(1 - math.exp(-2))])


def _pair(ens, f1, f2, terminal=Terminal.brownian()):
    marks = ens.mark_space
    s1 = solve_backward(BSDEPProblem(terminal, f1, GRID, marks), ens)
    s2 = solve_backward(BSDEPProblem(terminal, f2, GRID, marks), ens)
    return s1, s2


class TestDeltaQuotients:
    def test_identical_solutions(self, small_jump_ens):
        f = GeneratorSpec(sin(Y), CoefficientFns(gamma=constant(1.0)), marks=ONE)
        s, _ = _pair(small_jump_ens, f, f)
        q = delta_quotients(s, s, f)
        assert not q.dy.any() and not q.dz.any() and not q.du.any()

    def test_affine_driver(self, small_jump_ens):
        f = GeneratorSpec(-0.7 * Y, CoefficientFns(gamma=constant(0.7)), marks=ONE)
        g = GeneratorSpec(0.3 * Y, CoefficientFns(gamma=constant(0.3)), marks=ONE)
        s1, s2 = _pair(small_jump_ens, f, g)
        q = delta_quotients(s1, s2, f)
        nz = s1.y[:, :-1] != s2.y[:, :-1]
        assert nz.mean() > 0.9
        assert np.allclose(q.dy[nz], -0.7, rtol=1e-9) and np.all(q.dy[~nz] == 0)
        assert q.within_bounds

    def test_sine_bound(self, small_jump_ens):
        f = GeneratorSpec(sin(Y) + sin(z(0)), CoefficientFns(gamma=constant(1.0), rho=constant(1.0)), marks=ONE)
        g = GeneratorSpec(sin(2 * Y), CoefficientFns(gamma=constant(2.0)), marks=ONE)
        s1, s2 = _pair(small_jump_ens, f, g, Terminal.brownian("square"))
        q = delta_quotients(s1, s2, f)
        assert q.bounds["y"]["max_abs"] <= 1.0 and q.bounds["z"]["max_abs"] <= 1.0 and q.within_bounds

    def test_telescoping_identity(self, small_jump_ens):
        kern = JumpKernel.scaled(0.6, 0.0, 1.0)
        f = GeneratorSpec(sin(Y) + 0.5 * z(0) + u_beta(), CoefficientFns(gamma=constant(1.0), rho=constant(0.5),
                                                                         sigma=constant(1.0)), marks=ONE, kernel=kern)
        g = GeneratorSpec(-Y, CoefficientFns(gamma=constant(1.0)), marks=ONE)
        s1, s2 = _pair(small_jump_ens, f, g, Terminal.jump_count("sin"))
        q = delta_quotients(s1, s2, f)
        t = GRID.nodes[:-1][None, :]
        lhs = f(t, s1.y[:, :-1], s1.z, s1.u) - f(t, s2.y[:, :-1], s2.z, s2.u)
        rhs = (q.dy * (s1.y[:, :-1] - s2.y[:, :-1]) + (q.dz * (s1.z - s2.z)).sum(-1)
               + (q.du * (s1.u - s2.u) * ONE.lam).sum(-1))
        assert np.allclose(lhs, rhs, atol=1e-12)
        # u enters linearly through beta = 0.6 on a mark with |e| = 1
        nz = s1.u[..., 0] != s2.u[..., 0]
        assert np.allclose(q.du[..., 0][nz], 0.6) and q.within_bounds

    def test_bound_violation_reported(self, small_jump_ens):
        f = GeneratorSpec(3 * Y, CoefficientFns(gamma=constant(1.0)), marks=ONE)
        g = GeneratorSpec(0 * Y, marks=ONE)
        s1, s2 = _pair(small_jump_ens, f, g)
        q = delta_quotients(s1, s2, f)
        assert not q.bounds["y"]["ok"] and not q.within_bounds

    def test_different_ensembles(self, small_jump_ens):
        other = sample_ensemble(GRID, ONE, 1, 2000, 18)
        f = GeneratorSpec(0 * Y, marks=ONE)
        a = BSDEPSolution.from_arrays(small_jump_ens, 0.0)
        b = BSDEPSolution.from_arrays(other, 0.0)
        with pytest.raises(ValueError):
            delta_quotients(a, b, f)
