"""Scalar expression trees: parsing, exact differentiation, evaluation.

Expressions live in the variables x1..xn, y1..yn and are built from exact
rational constants, +, -, *, /, integer powers and the functions sin, cos,
exp.  Trees are immutable; constant folding and the 0/1 identities are the
only simplifications applied.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Node",
    "Const",
    "Var",
    "Add",
    "Sub",
    "Mul",
    "Div",
    "Pow",
    "Neg",
    "Call",
    "Jet",
    "ExprError",
    "ParseError",
    "EvalError",
    "parse",
    "differentiate",
    "evaluate",
    "evaluate_jet",
    "to_text",
    "const",
    "var",
    "add",
    "sub",
    "mul",
    "div",
    "powi",
    "neg",
    "call",
    "used_variables",
    "compile_scalar",
    "compile_vector",
    "JetEvaluator",
]

FUNCTIONS = ("sin", "cos", "exp")


class ExprError(ValueError):
    pass


class ParseError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class EvalError(ExprError):
    pass


# ---------------------------------------------------------------------------
# AST nodes.  Every node records the declared dimension n so that derived
# expressions (derivatives, assembled Hamiltonians) keep their variable range.


@dataclass(frozen=True)
class Node:
    n: int


@dataclass(frozen=True)
class Const(Node):
    value: Fraction


@dataclass(frozen=True)
class Var(Node):
    kind: str  # 'x' or 'y'
    index: int  # 1-based


@dataclass(frozen=True)
class Add(Node):
    a: Node
    b: Node


@dataclass(frozen=True)
class Sub(Node):
    a: Node
    b: Node


@dataclass(frozen=True)
class Mul(Node):
    a: Node
    b: Node


@dataclass(frozen=True)
class Div(Node):
    a: Node
    b: Node


@dataclass(frozen=True)
class Pow(Node):
    base: Node
    exponent: int


@dataclass(frozen=True)
class Neg(Node):
    a: Node


@dataclass(frozen=True)
class Call(Node):
    func: str
    arg: Node


# ---------------------------------------------------------------------------
# Smart constructors: constant folding plus 0/1 identities, nothing more.


def const(value, n: int) -> Const:
    return Const(n, Fraction(value))


def var(kind: str, index: int, n: int) -> Var:
    if kind not in ("x", "y"):
        raise ExprError(f"unknown variable kind {kind!r}")
    if not 1 <= index <= n:
        raise ExprError(f"variable index {kind}{index} out of range for n={n}")
    return Var(n, kind, index)


def _join_n(a: Node, b: Node) -> int:
    if a.n != b.n:
        raise ExprError(f"dimension mismatch: {a.n} vs {b.n}")
    return a.n


def _is_const(e: Node, value=None) -> bool:
    if not isinstance(e, Const):
        return False
    return value is None or e.value == value


def add(a: Node, b: Node) -> Node:
    n = _join_n(a, b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(n, a.value + b.value)
    if _is_const(a, 0):
        return b
    if _is_const(b, 0):
        return a
    return Add(n, a, b)


def sub(a: Node, b: Node) -> Node:
    n = _join_n(a, b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(n, a.value - b.value)
    if _is_const(b, 0):
        return a
    if _is_const(a, 0):
        return neg(b)
    return Sub(n, a, b)


def mul(a: Node, b: Node) -> Node:
    n = _join_n(a, b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(n, a.value * b.value)
    if _is_const(a, 0) or _is_const(b, 0):
        return Const(n, Fraction(0))
    if _is_const(a, 1):
        return b
    if _is_const(b, 1):
        return a
    return Mul(n, a, b)


def div(a: Node, b: Node) -> Node:
    n = _join_n(a, b)
    if _is_const(b, 0):
        raise ExprError("division by constant zero")
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(n, a.value / b.value)
    if _is_const(b, 1):
        return a
    if _is_const(a, 0):
        return Const(n, Fraction(0))
    return Div(n, a, b)


def powi(base: Node, exponent: int) -> Node:
    if exponent == 0:
        return Const(base.n, Fraction(1))
    if exponent == 1:
        return base
    if isinstance(base, Const):
        return Const(base.n, base.value ** exponent)
    return Pow(base.n, base, exponent)


def neg(a: Node) -> Node:
    if isinstance(a, Const):
        return Const(a.n, -a.value)
    if isinstance(a, Neg):
        return a.a
    return Neg(a.n, a)


def call(func: str, arg: Node) -> Node:
    if func not in FUNCTIONS:
        raise ExprError(f"unknown function {func!r}")
    return Call(arg.n, func, arg)


# ---------------------------------------------------------------------------
# Parsing.  Grammar (left-associative, ^ binds tightest, then unary -):
#   expr   := term (('+'|'-') term)*
#   term   := factor (('*'|'/') factor)*
#   factor := atom ['^' integer] | '-' factor
#   atom   := number | ident | func '(' expr ')' | '(' expr ')'

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d+)?)|(?P<name>[A-Za-z]+\d*)|(?P<op>[-+*/^()]))"
)


class _Tokenizer:
    def __init__(self, text: str):
        self.text = text
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            m = _TOKEN_RE.match(text, pos)
            if m is None or m.end() == pos:
                stripped = pos + len(text[pos:]) - len(text[pos:].lstrip())
                raise ParseError(f"unexpected character {text[stripped]!r}", stripped)
            if m.lastgroup == "num":
                self.tokens.append(("num", m.group("num"), m.start("num")))
            elif m.lastgroup == "name":
                self.tokens.append(("name", m.group("name"), m.start("name")))
            else:
                self.tokens.append(("op", m.group("op"), m.start("op")))
            pos = m.end()
        self.tokens.append(("end", "", len(text)))
        self.i = 0

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def next(self) -> tuple[str, str, int]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok


_VAR_RE = re.compile(r"^([xy])(\d+)$")


class _Parser:
    def __init__(self, text: str, n: int):
        if n < 1:
            raise ExprError(f"dimension must be >= 1, got {n}")
        self.toks = _Tokenizer(text)
        self.n = n

    def parse(self) -> Node:
        e = self.expr()
        kind, value, offset = self.toks.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {value!r}", offset)
        return e

    def expr(self) -> Node:
        e = self.term()
        while True:
            kind, value, _ = self.toks.peek()
            if kind == "op" and value in "+-":
                self.toks.next()
                rhs = self.term()
                e = add(e, rhs) if value == "+" else sub(e, rhs)
            else:
                return e

    def term(self) -> Node:
        e = self.factor()
        while True:
            kind, value, _ = self.toks.peek()
            if kind == "op" and value in "*/":
                self.toks.next()
                rhs = self.factor()
                e = mul(e, rhs) if value == "*" else div(e, rhs)
            else:
                return e

    def factor(self) -> Node:
        kind, value, _ = self.toks.peek()
        if kind == "op" and value == "-":
            self.toks.next()
            return neg(self.factor())
        e = self.atom()
        kind, value, _ = self.toks.peek()
        if kind == "op" and value == "^":
            self.toks.next()
            e = powi(e, self.integer())
        return e

    def integer(self) -> int:
        sign = 1
        kind, value, offset = self.toks.peek()
        if kind == "op" and value == "-":
            self.toks.next()
            sign = -1
            kind, value, offset = self.toks.peek()
        if kind != "num" or "." in value:
            raise ParseError("expected integer exponent", offset)
        self.toks.next()
        return sign * int(value)

    def atom(self) -> Node:
        kind, value, offset = self.toks.next()
        if kind == "num":
            return const(Fraction(value), self.n)
        if kind == "name":
            m = _VAR_RE.match(value)
            if m:
                index = int(m.group(2))
                if not 1 <= index <= self.n:
                    raise ParseError(
                        f"variable index {value} out of range for n={self.n}", offset
                    )
                return var(m.group(1), index, self.n)
            if value in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return call(value, arg)
            raise ParseError(f"unknown identifier {value!r}", offset)
        if kind == "op" and value == "(":
            e = self.expr()
            self.expect(")")
            return e
        raise ParseError(f"expected a value, got {value!r}" if value else "unexpected end of input", offset)

    def expect(self, op: str) -> None:
        kind, value, offset = self.toks.next()
        if kind != "op" or value != op:
            raise ParseError(f"expected {op!r}", offset)


def parse(text: str, n: int) -> Node:
    """Parse ``text`` into an expression tree over x1..xn, y1..yn."""
    return _Parser(text, n).parse()


# ---------------------------------------------------------------------------
# Printing, chosen so that parse(to_text(e), e.n) reproduces e exactly.

_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _prec(e: Node) -> int:
    if isinstance(e, (Add, Sub)):
        return _PREC_ADD
    if isinstance(e, (Mul, Div)):
        return _PREC_MUL
    if isinstance(e, Neg):
        return _PREC_NEG
    if isinstance(e, Pow):
        return _PREC_POW
    if isinstance(e, Const):
        # "1/2" and "-1/2" re-parse through the / production, "-2" through
        # unary minus; parenthesize them accordingly
        if e.value.denominator != 1:
            return _PREC_MUL
        if e.value < 0:
            return _PREC_NEG
    return _PREC_ATOM


def _wrap(e: Node, minimum: int) -> str:
    s = to_text(e)
    return f"({s})" if _prec(e) < minimum else s


def to_text(e: Node) -> str:
    if isinstance(e, Const):
        v = e.value
        return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"
    if isinstance(e, Var):
        return f"{e.kind}{e.index}"
    if isinstance(e, Add):
        return f"{_wrap(e.a, _PREC_ADD)} + {_wrap(e.b, _PREC_ADD + 1)}"
    if isinstance(e, Sub):
        return f"{_wrap(e.a, _PREC_ADD)} - {_wrap(e.b, _PREC_ADD + 1)}"
    if isinstance(e, Mul):
        return f"{_wrap(e.a, _PREC_MUL)}*{_wrap(e.b, _PREC_MUL + 1)}"
    if isinstance(e, Div):
        return f"{_wrap(e.a, _PREC_MUL)}/{_wrap(e.b, _PREC_MUL + 1)}"
    if isinstance(e, Neg):
        return f"-{_wrap(e.a, _PREC_NEG)}"
    if isinstance(e, Pow):
        return f"{_wrap(e.base, _PREC_ATOM)}^{e.exponent}"
    if isinstance(e, Call):
        return f"{e.func}({to_text(e.arg)})"
    raise TypeError(f"not an expression node: {e!r}")


# ---------------------------------------------------------------------------
# Differentiation (exact, symbolic).


def _as_variable(v) -> tuple[str, int]:
    if isinstance(v, Var):
        return v.kind, v.index
    kind, index = v
    return kind, int(index)


def differentiate(e: Node, v) -> Node:
    """Exact partial derivative of ``e`` with respect to variable ``v``.

    ``v`` is a ``Var`` or a ``(kind, index)`` pair such as ``("y", 1)``.
    """
    kind, index = _as_variable(v)
    if kind not in ("x", "y") or not 1 <= index <= e.n:
        raise ExprError(f"variable {kind}{index} not declared for n={e.n}")
    return _diff(e, kind, index)


def _diff(e: Node, kind: str, index: int) -> Node:
    n = e.n
    if isinstance(e, Const):
        return Const(n, Fraction(0))
    if isinstance(e, Var):
        hit = e.kind == kind and e.index == index
        return Const(n, Fraction(1 if hit else 0))
    if isinstance(e, Add):
        return add(_diff(e.a, kind, index), _diff(e.b, kind, index))
    if isinstance(e, Sub):
        return sub(_diff(e.a, kind, index), _diff(e.b, kind, index))
    if isinstance(e, Mul):
        da, db = _diff(e.a, kind, index), _diff(e.b, kind, index)
        return add(mul(da, e.b), mul(e.a, db))
    if isinstance(e, Div):
        da, db = _diff(e.a, kind, index), _diff(e.b, kind, index)
        return div(sub(mul(da, e.b), mul(e.a, db)), powi(e.b, 2))
    if isinstance(e, Pow):
        dbase = _diff(e.base, kind, index)
        return mul(mul(const(e.exponent, n), powi(e.base, e.exponent - 1)), dbase)
    if isinstance(e, Neg):
        return neg(_diff(e.a, kind, index))
    if isinstance(e, Call):
        darg = _diff(e.arg, kind, index)
        if e.func == "sin":
            outer: Node = call("cos", e.arg)
        elif e.func == "cos":
            outer = neg(call("sin", e.arg))
        else:  # exp
            outer = call("exp", e.arg)
        return mul(outer, darg)
    raise TypeError(f"not an expression node: {e!r}")


def used_variables(e: Node) -> set[tuple[str, int]]:
    out: set[tuple[str, int]] = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if isinstance(node, Var):
            out.add((node.kind, node.index))
        elif isinstance(node, (Add, Sub, Mul, Div)):
            stack.extend((node.a, node.b))
        elif isinstance(node, Neg):
            stack.append(node.a)
        elif isinstance(node, Pow):
            stack.append(node.base)
        elif isinstance(node, Call):
            stack.append(node.arg)
    return out


# ---------------------------------------------------------------------------
# Evaluation.


def _coords(point, n: int) -> Sequence[float]:
    # Accepts a PhasePoint-like object (with .x and .y) or a flat sequence
    # of length 2n ordered (x1..xn, y1..yn).
    if hasattr(point, "x") and hasattr(point, "y"):
        z = list(point.x) + list(point.y)
    else:
        z = list(point)
    if len(z) != 2 * n:
        raise ExprError(f"point of length {len(z)} does not match dimension n={n}")
    return z


def evaluate(e: Node, point) -> float:
    """Evaluate ``e`` at a phase point; raises EvalError on division by zero."""
    z = _coords(point, e.n)
    return _eval(e, z)


def _eval(e: Node, z: Sequence[float]) -> float:
    if isinstance(e, Const):
        return float(e.value)
    if isinstance(e, Var):
        offset = 0 if e.kind == "x" else e.n
        return float(z[offset + e.index - 1])
    if isinstance(e, Add):
        return _eval(e.a, z) + _eval(e.b, z)
    if isinstance(e, Sub):
        return _eval(e.a, z) - _eval(e.b, z)
    if isinstance(e, Mul):
        return _eval(e.a, z) * _eval(e.b, z)
    if isinstance(e, Div):
        denom = _eval(e.b, z)
        if denom == 0.0:
            raise EvalError(f"division by zero in '{to_text(e)}'")
        return _eval(e.a, z) / denom
    if isinstance(e, Pow):
        base = _eval(e.base, z)
        if base == 0.0 and e.exponent < 0:
            raise EvalError(f"zero raised to negative power in '{to_text(e)}'")
        return base ** e.exponent
    if isinstance(e, Neg):
        return -_eval(e.a, z)
    if isinstance(e, Call):
        value = _eval(e.arg, z)
        return getattr(math, e.func)(value)
    raise TypeError(f"not an expression node: {e!r}")


@dataclass(frozen=True)
class Jet:
    """Value, gradient and Hessian of an expression at a phase point.

    The gradient is ordered (d/dx1..d/dxn, d/dy1..d/dyn); the Hessian is
    mirrored from its upper triangle so it is exactly symmetric.
    """

    value: float
    gradient: np.ndarray
    hessian: np.ndarray


def _variable_list(n: int) -> list[tuple[str, int]]:
    return [("x", i) for i in range(1, n + 1)] + [("y", i) for i in range(1, n + 1)]


def evaluate_jet(e: Node, point) -> Jet:
    """Value, gradient and exact-symbolic Hessian of ``e`` at ``point``."""
    z = _coords(point, e.n)
    variables = _variable_list(e.n)
    grads = [differentiate(e, v) for v in variables]
    m = len(variables)
    value = _eval(e, z)
    gradient = np.array([_eval(g, z) for g in grads])
    hessian = np.zeros((m, m))
    for i in range(m):
        for j in range(i, m):
            hij = _eval(differentiate(grads[i], variables[j]), z)
            hessian[i, j] = hij
            hessian[j, i] = hij
    return Jet(value, gradient, hessian)


# ---------------------------------------------------------------------------
# Compilation to plain Python functions for tight numeric loops.


def _codegen(e: Node) -> str:
    if isinstance(e, Const):
        v = e.value
        if v.denominator == 1:
            return f"({v.numerator})" if v >= 0 else f"({v.numerator})"
        return f"({v.numerator}/{v.denominator})"
    if isinstance(e, Var):
        offset = 0 if e.kind == "x" else e.n
        return f"z[{offset + e.index - 1}]"
    if isinstance(e, Add):
        return f"({_codegen(e.a)}+{_codegen(e.b)})"
    if isinstance(e, Sub):
        return f"({_codegen(e.a)}-{_codegen(e.b)})"
    if isinstance(e, Mul):
        return f"({_codegen(e.a)}*{_codegen(e.b)})"
    if isinstance(e, Div):
        return f"({_codegen(e.a)}/{_codegen(e.b)})"
    if isinstance(e, Pow):
        return f"({_codegen(e.base)}**({e.exponent}))"
    if isinstance(e, Neg):
        return f"(-{_codegen(e.a)})"
    if isinstance(e, Call):
        return f"{e.func}({_codegen(e.arg)})"
    raise TypeError(f"not an expression node: {e!r}")


_NAMESPACE = {"sin": math.sin, "cos": math.cos, "exp": math.exp}


def compile_scalar(e: Node) -> Callable[[Sequence[float]], float]:
    """Compile an expression to a fast float-valued function of z[0:2n]."""
    source = f"def _f(z):\n    return {_codegen(e)}\n"
    ns = dict(_NAMESPACE)
    exec(source, ns)
    return ns["_f"]


def compile_vector(exprs: Iterable[Node]) -> Callable[[Sequence[float]], tuple]:
    body = ", ".join(_codegen(e) for e in exprs)
    source = f"def _f(z):\n    return ({body},)\n"
    ns = dict(_NAMESPACE)
    exec(source, ns)
    return ns["_f"]


class JetEvaluator:
    """Precompiled value/gradient/Hessian evaluation for one expression."""

    def __init__(self, e: Node):
        self.expression = e
        self.n = e.n
        variables = _variable_list(e.n)
        m = len(variables)
        grads = [differentiate(e, v) for v in variables]
        self._value = compile_scalar(e)
        self._gradient = compile_vector(grads)
        pairs = [(i, j) for i in range(m) for j in range(i, m)]
        self._pairs = pairs
        self._hessian = compile_vector(
            [differentiate(grads[i], variables[j]) for i, j in pairs]
        )
        self._m = m

    def value(self, z) -> float:
        return self._value(z)

    def gradient(self, z) -> np.ndarray:
        return np.array(self._gradient(z))

    def hessian(self, z) -> np.ndarray:
        m = self._m
        out = np.empty((m, m))
        flat = self._hessian(z)
        for (i, j), value in zip(self._pairs, flat):
            out[i, j] = value
            out[j, i] = value
        return out

    def jet(self, z) -> Jet:
        return Jet(self.value(z), self.gradient(z), self.hessian(z))
