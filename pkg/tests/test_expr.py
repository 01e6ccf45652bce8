"""Parsing, exact differentiation and jet evaluation.

Oracles: hand-computed derivatives and values for small expressions, and
central finite differences for randomized gradient checks.
"""

import math
from fractions import Fraction

import numpy as np
import pytest

from defham import expr as ex

from conftest import random_polynomial_expr, random_point


class TestParsing:
    def test_value_and_gradient_of_quadratic(self):
        # [DERIVED] H = (x1^2 + y1^2)/2 at (1, 2): value 2.5, gradient (1, 2).
        e = ex.parse("(x1^2 + y1^2)/2", 1)
        jet = ex.evaluate_jet(e, (1.0, 2.0))
        assert jet.value == pytest.approx(2.5, abs=1e-15)
        assert jet.gradient == pytest.approx([1.0, 2.0], abs=1e-15)

    def test_parse_error_reports_offset(self):
        # [TRIVIAL] dangling operator fails with the offending offset.
        with pytest.raises(ex.ParseError) as err:
            ex.parse("x1 +", 1)
        assert err.value.offset == 4

    def test_unbalanced_paren(self):
        with pytest.raises(ex.ParseError):
            ex.parse("(x1 + y1", 1)

    def test_unknown_function(self):
        with pytest.raises(ex.ExprError):
            ex.parse("tan(x1)", 1)

    def test_variable_index_out_of_range(self):
        with pytest.raises(ex.ExprError):
            ex.parse("x2 + y1", 1)

    def test_division_by_zero_raises_eval_error(self):
        e = ex.parse("x1/y1", 1)
        with pytest.raises(ex.EvalError):
            ex.evaluate(e, (1.0, 0.0))

    def test_functions_evaluate(self):
        # [DERIVED] sin, cos, exp against math module values.
        e = ex.parse("sin(x1) + cos(y1) + exp(x1*y1)", 1)
        got = ex.evaluate(e, (0.5, 0.25))
        want = math.sin(0.5) + math.cos(0.25) + math.exp(0.125)
        assert got == pytest.approx(want, rel=1e-15)

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_round_trip_through_text(self, rng, n):
        # [TRIVIAL] parse(to_text(e)) evaluates identically to e.
        for _ in range(20):
            e = random_polynomial_expr(rng, n)
            e2 = ex.parse(ex.to_text(e), n)
            z = random_point(rng, n)
            assert ex.evaluate(e2, z) == pytest.approx(ex.evaluate(e, z), rel=1e-14, abs=1e-14)


class TestDifferentiation:
    def test_hand_derivatives(self):
        # [DERIVED] d/dy1 of (x1^2 + y1^2)/2 is y1; d/dx1 of x1*y1 is y1;
        # d^2/(dy1 dx1) of x1*y1 is 1.
        h = ex.parse("(x1^2 + y1^2)/2", 1)
        d = ex.differentiate(h, ("y", 1))
        assert ex.evaluate(d, (3.0, 7.0)) == pytest.approx(7.0, abs=1e-15)

        f = ex.parse("x1*y1", 1)
        dx = ex.differentiate(f, ("x", 1))
        assert ex.evaluate(dx, (3.0, 7.0)) == pytest.approx(7.0, abs=1e-15)
        dxy = ex.differentiate(dx, ("y", 1))
        assert ex.evaluate(dxy, (3.0, 7.0)) == pytest.approx(1.0, abs=1e-15)

    def test_product_and_chain_rule(self):
        # [DERIVED] d/dx1 [x1^2 sin(y1 x1)] = 2 x1 sin(y1 x1) + x1^2 y1 cos(y1 x1).
        e = ex.parse("x1^2 * sin(y1*x1)", 1)
        d = ex.differentiate(e, ("x", 1))
        x, y = 0.7, 1.3
        want = 2 * x * math.sin(y * x) + x * x * y * math.cos(y * x)
        assert ex.evaluate(d, (x, y)) == pytest.approx(want, rel=1e-14)

    @pytest.mark.parametrize("n", [1, 2])
    def test_gradient_matches_finite_differences(self, rng, n):
        # [DERIVED] symbolic gradient against central differences, 200 cases.
        step = 1e-5
        for _ in range(100):
            e = random_polynomial_expr(rng, n)
            z = random_point(rng, n)
            jet = ex.evaluate_jet(e, z)
            for j in range(2 * n):
                zp, zm = z.copy(), z.copy()
                zp[j] += step
                zm[j] -= step
                fd = (ex.evaluate(e, zp) - ex.evaluate(e, zm)) / (2 * step)
                assert jet.gradient[j] == pytest.approx(fd, rel=1e-6, abs=1e-6)

    def test_hessian_symmetric(self, rng):
        # [TRIVIAL] the jet Hessian is exactly symmetric by construction.
        for _ in range(20):
            e = random_polynomial_expr(rng, 2)
            jet = ex.evaluate_jet(e, random_point(rng, 2))
            assert np.array_equal(jet.hessian, jet.hessian.T)

    def test_derivative_of_constant_is_zero(self):
        e = ex.const(Fraction(3, 2), 2)
        d = ex.differentiate(e, ("x", 1))
        assert ex.evaluate(d, (0.0, 0.0, 0.0, 0.0)) == 0.0


class TestCompiled:
    def test_compile_scalar_matches_evaluate(self, rng):
        for _ in range(20):
            e = random_polynomial_expr(rng, 2)
            f = ex.compile_scalar(e)
            z = random_point(rng, 2)
            assert f(z) == pytest.approx(ex.evaluate(e, z), rel=1e-14, abs=1e-14)

    def test_jet_evaluator_matches_evaluate_jet(self, rng):
        e = random_polynomial_expr(rng, 2)
        je = ex.JetEvaluator(e)
        z = random_point(rng, 2)
        jet = ex.evaluate_jet(e, z)
        assert je.value(z) == pytest.approx(jet.value, rel=1e-13, abs=1e-13)
        assert je.gradient(z) == pytest.approx(jet.gradient, rel=1e-12, abs=1e-12)
        assert je.hessian(z) == pytest.approx(jet.hessian, rel=1e-12, abs=1e-12)

    def test_used_variables(self):
        e = ex.parse("x1*y2 + 3", 2)
        assert ex.used_variables(e) == {("x", 1), ("y", 2)}
