"""Exact bigraded exterior calculus on flat T*R^n with polynomial coefficients.

A form is stored as a map from index pairs (I, J) to Poly coefficients,
where I and J are strictly increasing subsets of {1..n} and the monomial is
dx_I ^ dy_J in that canonical order.  A term with |I| = b, |J| = c has type
(b, c).  The flat model is bi-Lagrangian, so the delta component of the
exterior derivative vanishes identically and

    d_q = partial_plus + (1/q) partial_minus.

All arithmetic is exact over the rationals.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .poly import Poly

__all__ = [
    "BigradedForm",
    "Classification",
    "wedge",
    "partial_plus",
    "partial_minus",
    "delta",
    "deformed_derivative",
    "omega_form",
    "classify_hamiltonian",
    "symbolic_bracket",
    "form_to_json",
    "form_from_json",
]


class BigradedForm:
    __slots__ = ("n", "terms")

    def __init__(self, n: int, terms: dict | None = None):
        self.n = n
        clean = {}
        if terms:
            for (I, J), p in terms.items():
                if p.n != n:
                    raise ValueError("coefficient dimension mismatch")
                if not p.is_zero():
                    clean[(tuple(I), tuple(J))] = p
        self.terms = clean

    @classmethod
    def zero(cls, n: int) -> "BigradedForm":
        return cls(n)

    @classmethod
    def from_poly(cls, p: Poly) -> "BigradedForm":
        return cls(p.n, {((), ()): p})

    @classmethod
    def basis(cls, n: int, I, J, coeff=None) -> "BigradedForm":
        I, J = tuple(I), tuple(J)
        for S in (I, J):
            if list(S) != sorted(set(S)) or any(not 1 <= i <= n for i in S):
                raise ValueError(f"bad index set {S} for n={n}")
        p = Poly.constant(n, 1) if coeff is None else coeff
        return cls(n, {(I, J): p})

    @classmethod
    def dx(cls, n: int, i: int) -> "BigradedForm":
        return cls.basis(n, (i,), ())

    @classmethod
    def dy(cls, n: int, i: int) -> "BigradedForm":
        return cls.basis(n, (), (i,))

    def _check(self, other: "BigradedForm") -> None:
        if self.n != other.n:
            raise ValueError(f"dimension mismatch: {self.n} vs {other.n}")

    def __add__(self, other: "BigradedForm") -> "BigradedForm":
        self._check(other)
        terms = dict(self.terms)
        for key, p in other.terms.items():
            terms[key] = terms[key] + p if key in terms else p
        return BigradedForm(self.n, terms)

    def __neg__(self) -> "BigradedForm":
        return BigradedForm(self.n, {k: -p for k, p in self.terms.items()})

    def __sub__(self, other: "BigradedForm") -> "BigradedForm":
        return self + (-other)

    def scale(self, r) -> "BigradedForm":
        r = Fraction(r)
        return BigradedForm(self.n, {k: p * r for k, p in self.terms.items()})

    def __eq__(self, other):
        if not isinstance(other, BigradedForm):
            return NotImplemented
        return self.n == other.n and self.terms == other.terms

    def __hash__(self):
        return hash((self.n, frozenset(self.terms.items())))

    def is_zero(self) -> bool:
        return not self.terms

    def types(self) -> set[tuple[int, int]]:
        return {(len(I), len(J)) for (I, J) in self.terms}

    def __repr__(self):
        if not self.terms:
            return "BigradedForm(0)"
        parts = []
        for (I, J), p in sorted(self.terms.items()):
            gens = [f"dx{i}" for i in I] + [f"dy{j}" for j in J]
            parts.append(f"[{p!r}] " + "^".join(gens) if gens else repr(p))
        return "BigradedForm(" + " + ".join(parts) + ")"


def _merge(I1, J1, I2, J2) -> Optional[tuple[int, tuple, tuple]]:
    """Koszul sign and canonical key for dx_I1^dy_J1 ^ dx_I2^dy_J2."""
    gens = (
        [(0, i) for i in I1]
        + [(1, j) for j in J1]
        + [(0, i) for i in I2]
        + [(1, j) for j in J2]
    )
    sign = 1
    for i in range(1, len(gens)):
        j = i
        while j > 0 and gens[j - 1] > gens[j]:
            gens[j - 1], gens[j] = gens[j], gens[j - 1]
            sign = -sign
            j -= 1
    for a, b in zip(gens, gens[1:]):
        if a == b:
            return None
    I = tuple(i for kind, i in gens if kind == 0)
    J = tuple(i for kind, i in gens if kind == 1)
    return sign, I, J


def wedge(a: BigradedForm, b: BigradedForm) -> BigradedForm:
    """Exact wedge product with Koszul signs; type adds componentwise."""
    a._check(b)
    terms: dict = {}
    for (I1, J1), p1 in a.terms.items():
        for (I2, J2), p2 in b.terms.items():
            merged = _merge(I1, J1, I2, J2)
            if merged is None:
                continue
            sign, I, J = merged
            contrib = p1 * p2 * sign
            key = (I, J)
            terms[key] = terms[key] + contrib if key in terms else contrib
    return BigradedForm(a.n, terms)


def _partial(a: BigradedForm, kind: str) -> BigradedForm:
    n = a.n
    terms: dict = {}
    for (I, J), p in a.terms.items():
        for i in range(1, n + 1):
            dp = p.diff(kind, i)
            if dp.is_zero():
                continue
            if kind == "x":
                merged = _merge((i,), (), I, J)
            else:
                merged = _merge((), (i,), I, J)
            if merged is None:
                continue
            sign, I2, J2 = merged
            contrib = dp * sign
            key = (I2, J2)
            terms[key] = terms[key] + contrib if key in terms else contrib
    return BigradedForm(n, terms)


def partial_plus(a: BigradedForm) -> BigradedForm:
    """Base component of d: sum_i dx_i ^ (da/dx_i); raises type by (1,0)."""
    return _partial(a, "x")


def partial_minus(a: BigradedForm) -> BigradedForm:
    """Fibre component of d: sum_i dy_i ^ (da/dy_i); raises type by (0,1)."""
    return _partial(a, "y")


def delta(a: BigradedForm) -> BigradedForm:
    """The (2,-1) component of d.

    Identically zero in the flat model: coordinate Lagrangian fibrations of
    T*R^n with constant base metric are bi-Lagrangian.
    """
    return BigradedForm.zero(a.n)


def deformed_derivative(a: BigradedForm, q) -> BigradedForm:
    """d_q a = partial_plus(a) + (1/q) partial_minus(a) (flat model)."""
    q = Fraction(q)
    if q == 0:
        raise ValueError("q must be nonzero")
    return partial_plus(a) + partial_minus(a).scale(Fraction(1) / q)


def omega_form(n: int) -> BigradedForm:
    """The canonical symplectic form sum_i dy_i ^ dx_i as a bigraded form.

    In canonical order each term reads -(dx_i ^ dy_i); every term has type
    (1,1).
    """
    terms = {((i,), (i,)): Poly.constant(n, -1) for i in range(1, n + 1)}
    return BigradedForm(n, terms)


@dataclass(frozen=True)
class Classification:
    simple: bool
    exceptionally_simple: bool
    conformal_ratio: Optional[Fraction]


def classify_hamiltonian(h: Poly) -> Classification:
    """Exact classification of a polynomial Hamiltonian.

    simple                <=>  partial_minus(partial_plus(H)) = 0
    exceptionally simple  <=>  partial_plus(H) = 0
    conformal_ratio = c'  <=>  omega = c' * partial_minus(partial_plus(H))
    """
    h0 = BigradedForm.from_poly(h)
    plus = partial_plus(h0)
    mixed = partial_minus(plus)
    simple = mixed.is_zero()
    exceptional = plus.is_zero()
    ratio: Optional[Fraction] = None
    if not simple:
        # mixed = r * omega for a nonzero rational r gives c' = 1/r
        omega = omega_form(h.n)
        key = ((1,), (1,))
        coeff = mixed.terms.get(key)
        if coeff is not None and coeff.is_constant():
            r = coeff.constant_value() / Fraction(-1)
            if r != 0 and mixed == omega.scale(r):
                ratio = Fraction(1) / r
    return Classification(simple=simple, exceptionally_simple=exceptional, conformal_ratio=ratio)


def symbolic_bracket(h: Poly, f: Poly, q) -> Poly:
    """Exact deformed bracket {H,F}_q = omega(X^q_H, X_F).

    In the coordinate convention omega = sum_i dy_i ^ dx_i this is
    sum_i (1/q) H_{y_i} F_{x_i} - H_{x_i} F_{y_i}; its antisymmetrization
    equals (1 + 1/q) times the q=1 bracket.
    """
    q = Fraction(q)
    if q == 0:
        raise ValueError("q must be nonzero")
    h._check(f)
    qinv = Fraction(1) / q
    out = Poly.zero(h.n)
    for i in range(1, h.n + 1):
        out = out + h.diff("y", i) * f.diff("x", i) * qinv - h.diff("x", i) * f.diff("y", i)
    return out


# ---------------------------------------------------------------------------
# JSON serialization:
# {"n": int, "terms": [{"dx": [...], "dy": [...],
#                       "poly": [{"exps": [...], "num": int, "den": int}]}]}


def form_to_json(a: BigradedForm) -> dict:
    terms = []
    for (I, J), p in sorted(a.terms.items()):
        poly = [
            {"exps": list(exps), "num": c.numerator, "den": c.denominator}
            for exps, c in sorted(p.terms.items())
        ]
        terms.append({"dx": list(I), "dy": list(J), "poly": poly})
    return {"n": a.n, "terms": terms}


def form_from_json(doc: dict) -> BigradedForm:
    n = int(doc["n"])
    terms = {}
    for entry in doc["terms"]:
        p = Poly(
            n,
            {
                tuple(item["exps"]): Fraction(item["num"], item["den"])
                for item in entry["poly"]
            },
        )
        terms[(tuple(entry["dx"]), tuple(entry["dy"]))] = p
    return BigradedForm(n, terms)
