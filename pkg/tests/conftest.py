"""Shared fixtures and random-object builders for the defham test suite."""

from fractions import Fraction

import numpy as np
import pytest

from defham import expr as ex
from defham.poly import Poly


def random_polynomial_expr(rng, n, degree=3, terms=6):
    """Random polynomial expression over x1..xn, y1..yn with small
    rational-friendly coefficients."""
    e = ex.const(0, n)
    for _ in range(terms):
        coeff = ex.const(Fraction(int(rng.integers(-4, 5)), int(rng.integers(1, 4))), n)
        term = coeff
        for _ in range(int(rng.integers(0, degree + 1))):
            kind = "x" if rng.random() < 0.5 else "y"
            index = int(rng.integers(1, n + 1))
            term = ex.mul(term, ex.var(kind, index, n))
        e = ex.add(e, term)
    return e


def random_poly(rng, n, degree=3, terms=6):
    """Random Poly with small rational coefficients."""
    p = Poly.zero(n)
    for _ in range(terms):
        exps = [0] * (2 * n)
        for _ in range(int(rng.integers(0, degree + 1))):
            exps[int(rng.integers(0, 2 * n))] += 1
        coeff = Fraction(int(rng.integers(-4, 5)), int(rng.integers(1, 4)))
        p = p + Poly(n, {tuple(exps): coeff})
    return p


def random_point(rng, n, scale=1.0):
    return np.asarray(rng.uniform(-scale, scale, 2 * n))


@pytest.fixture
def rng():
    return np.random.default_rng(20260824)
