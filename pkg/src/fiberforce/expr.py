"""Tiny differentiable expression language.

Every smooth map in the engine (sections, relation guards, connection lift
fields, base maps) is an expression tree over named real variables. Evaluation
is exact IEEE double arithmetic; first derivatives are forward-mode (dual
numbers), so they agree with the chain rule to rounding error, not to a
finite-difference tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping

import numpy as np


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UndeclaredVariableError(ExprError):
    def __init__(self, name: str, offset: int = -1):
        super().__init__(f"undeclared variable '{name}'")
        self.name = name
        self.offset = offset


class ExprDomainError(ExprError):
    """Evaluation left the real domain (division by zero, sqrt of a negative,
    or a non-finite result)."""

    def __init__(self, message: str, subtree: "Expr"):
        super().__init__(f"{message} in '{to_source(subtree)}'")
        self.subtree = subtree


class NonDifferentiableError(ExprError):
    def __init__(self, message: str, subtree: "Expr"):
        super().__init__(f"{message} in '{to_source(subtree)}'")
        self.subtree = subtree


@dataclass(frozen=True)
class Expr:
    pass


@dataclass(frozen=True)
class Num(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Div(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int  # integer literal only; keeps derivatives total


@dataclass(frozen=True)
class Call(Expr):
    fn: str
    arg: Expr


FUNCTIONS = ("sin", "cos", "exp", "sqrt", "abs")


# ---------------------------------------------------------------------------
# Parsing


class _Tokenizer:
    _PUNCT = "+-*/^(),"

    def __init__(self, source: str):
        self.source = source
        self.pos = 0

    def peek(self):
        return self.source[self.pos] if self.pos < len(self.source) else ""

    def skip_ws(self):
        while self.pos < len(self.source) and self.source[self.pos].isspace():
            self.pos += 1

    def next(self):
        """Return (kind, value, offset); kind in {num, ident, punct, eof}."""
        self.skip_ws()
        start = self.pos
        ch = self.peek()
        if not ch:
            return ("eof", "", start)
        if ch in self._PUNCT:
            self.pos += 1
            return ("punct", ch, start)
        if ch.isdigit() or ch == ".":
            i = self.pos
            saw_digit = False
            while i < len(self.source) and (self.source[i].isdigit() or self.source[i] == "."):
                saw_digit = saw_digit or self.source[i].isdigit()
                i += 1
            if i < len(self.source) and self.source[i] in "eE":
                j = i + 1
                if j < len(self.source) and self.source[j] in "+-":
                    j += 1
                if j < len(self.source) and self.source[j].isdigit():
                    i = j
                    while i < len(self.source) and self.source[i].isdigit():
                        i += 1
            text = self.source[start:i]
            if not saw_digit:
                raise ExprSyntaxError(f"malformed number '{text}'", start)
            self.pos = i
            try:
                value = float(text)
            except ValueError:
                raise ExprSyntaxError(f"malformed number '{text}'", start) from None
            return ("num", value, start)
        if ch.isalpha() or ch == "_":
            i = self.pos
            while i < len(self.source) and (self.source[i].isalnum() or self.source[i] == "_"):
                i += 1
            text = self.source[start:i]
            self.pos = i
            return ("ident", text, start)
        raise ExprSyntaxError(f"unexpected character {ch!r}", start)


class _Parser:
    def __init__(self, source: str, variables):
        self.toks = _Tokenizer(source)
        self.variables = frozenset(variables)
        self.cur = self.toks.next()

    def advance(self):
        self.cur = self.toks.next()

    def expect(self, value: str):
        kind, val, off = self.cur
        if kind != "punct" or val != value:
            raise ExprSyntaxError(f"expected '{value}', got {val!r}", off)
        self.advance()

    def parse(self) -> Expr:
        e = self.sum()
        kind, val, off = self.cur
        if kind != "eof":
            raise ExprSyntaxError(f"trailing input {val!r}", off)
        return e

    def sum(self) -> Expr:
        e = self.product()
        while self.cur[0] == "punct" and self.cur[1] in "+-":
            op = self.cur[1]
            self.advance()
            rhs = self.product()
            e = Add(e, rhs) if op == "+" else Sub(e, rhs)
        return e

    def product(self) -> Expr:
        e = self.unary()
        while self.cur[0] == "punct" and self.cur[1] in "*/":
            op = self.cur[1]
            self.advance()
            rhs = self.unary()
            e = Mul(e, rhs) if op == "*" else Div(e, rhs)
        return e

    def unary(self) -> Expr:
        if self.cur[0] == "punct" and self.cur[1] == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        e = self.atom()
        if self.cur[0] == "punct" and self.cur[1] == "^":
            off = self.cur[2]
            self.advance()
            kind, val, voff = self.cur
            if kind != "num" or val != int(val):
                raise ExprSyntaxError("exponent must be an integer literal", voff)
            self.advance()
            if self.cur[0] == "punct" and self.cur[1] == "^":
                raise ExprSyntaxError("chained '^' not allowed; parenthesize", self.cur[2])
            return Pow(e, int(val))
        return e

    def atom(self) -> Expr:
        kind, val, off = self.cur
        if kind == "num":
            self.advance()
            return Num(float(val))
        if kind == "punct" and val == "(":
            self.advance()
            e = self.sum()
            self.expect(")")
            return e
        if kind == "ident":
            self.advance()
            if self.cur[0] == "punct" and self.cur[1] == "(":
                if val not in FUNCTIONS:
                    raise ExprSyntaxError(f"unknown function '{val}'", off)
                self.advance()
                arg = self.sum()
                self.expect(")")
                return Call(val, arg)
            if val in FUNCTIONS:
                raise ExprSyntaxError(f"function '{val}' needs an argument list", off)
            if val not in self.variables:
                raise UndeclaredVariableError(val, off)
            return Var(val)
        raise ExprSyntaxError(f"expected expression, got {val!r}", off)


def parse_expr(source: str, variables) -> Expr:
    """Parse `source` over the declared variable names."""
    return _Parser(source, variables).parse()


# ---------------------------------------------------------------------------
# Printing

_LEVEL = {Add: 1, Sub: 1, Mul: 2, Div: 2, Neg: 3, Pow: 4, Num: 5, Var: 5, Call: 5}


def to_source(e: Expr) -> str:
    """Print an expression; parse(to_source(e)) rebuilds an equivalent tree."""

    def wrap(child: Expr, level: int) -> str:
        text = to_source(child)
        if _LEVEL[type(child)] < level:
            return f"({text})"
        return text

    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Add):
        return f"{wrap(e.left, 1)} + {wrap(e.right, 2)}"
    if isinstance(e, Sub):
        return f"{wrap(e.left, 1)} - {wrap(e.right, 2)}"
    if isinstance(e, Mul):
        return f"{wrap(e.left, 2)}*{wrap(e.right, 3)}"
    if isinstance(e, Div):
        return f"{wrap(e.left, 2)}/{wrap(e.right, 3)}"
    if isinstance(e, Neg):
        return f"-{wrap(e.arg, 3)}"
    if isinstance(e, Pow):
        return f"{wrap(e.base, 5)}^{e.exponent}"
    if isinstance(e, Call):
        return f"{e.fn}({to_source(e.arg)})"
    raise TypeError(f"not an Expr: {e!r}")


def free_vars(e: Expr) -> frozenset:
    if isinstance(e, Var):
        return frozenset((e.name,))
    if isinstance(e, Num):
        return frozenset()
    if isinstance(e, (Add, Sub, Mul, Div)):
        return free_vars(e.left) | free_vars(e.right)
    if isinstance(e, Neg):
        return free_vars(e.arg)
    if isinstance(e, Pow):
        return free_vars(e.base)
    if isinstance(e, Call):
        return free_vars(e.arg)
    raise TypeError(f"not an Expr: {e!r}")


# ---------------------------------------------------------------------------
# Evaluation


def eval_expr(e: Expr, binding: Mapping[str, float]) -> float:
    """Evaluate at a variable binding. Raises ExprDomainError on division by
    zero, sqrt of a negative, or a non-finite result."""
    v = _eval(e, binding)
    if not math.isfinite(v):
        raise ExprDomainError("non-finite result", e)
    return v


def _eval(e: Expr, b: Mapping[str, float]) -> float:
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        try:
            return b[e.name]
        except KeyError:
            raise UndeclaredVariableError(e.name) from None
    if isinstance(e, Add):
        return _eval(e.left, b) + _eval(e.right, b)
    if isinstance(e, Sub):
        return _eval(e.left, b) - _eval(e.right, b)
    if isinstance(e, Mul):
        return _eval(e.left, b) * _eval(e.right, b)
    if isinstance(e, Div):
        denom = _eval(e.right, b)
        if denom == 0.0:
            raise ExprDomainError("division by zero", e)
        return _eval(e.left, b) / denom
    if isinstance(e, Neg):
        return -_eval(e.arg, b)
    if isinstance(e, Pow):
        base = _eval(e.base, b)
        if e.exponent < 0 and base == 0.0:
            raise ExprDomainError("zero raised to a negative power", e)
        return base ** e.exponent
    if isinstance(e, Call):
        x = _eval(e.arg, b)
        if e.fn == "sin":
            return math.sin(x)
        if e.fn == "cos":
            return math.cos(x)
        if e.fn == "exp":
            return math.exp(x)
        if e.fn == "sqrt":
            if x < 0.0:
                raise ExprDomainError("sqrt of a negative", e)
            return math.sqrt(x)
        if e.fn == "abs":
            return abs(x)
    raise TypeError(f"not an Expr: {e!r}")


def diff_expr(e: Expr, binding: Mapping[str, float], wrt: str) -> float:
    """Forward-mode derivative of e with respect to `wrt` at `binding`.

    abs is rejected at 0 and sqrt at <= 0: the engine treats non-smooth points
    as hard errors rather than picking a subgradient.
    """
    v, d = _eval_dual(e, binding, wrt)
    if not (math.isfinite(v) and math.isfinite(d)):
        raise ExprDomainError("non-finite result", e)
    return d


def _eval_dual(e: Expr, b: Mapping[str, float], wrt: str):
    if isinstance(e, Num):
        return e.value, 0.0
    if isinstance(e, Var):
        try:
            return b[e.name], (1.0 if e.name == wrt else 0.0)
        except KeyError:
            raise UndeclaredVariableError(e.name) from None
    if isinstance(e, Add):
        lv, ld = _eval_dual(e.left, b, wrt)
        rv, rd = _eval_dual(e.right, b, wrt)
        return lv + rv, ld + rd
    if isinstance(e, Sub):
        lv, ld = _eval_dual(e.left, b, wrt)
        rv, rd = _eval_dual(e.right, b, wrt)
        return lv - rv, ld - rd
    if isinstance(e, Mul):
        lv, ld = _eval_dual(e.left, b, wrt)
        rv, rd = _eval_dual(e.right, b, wrt)
        return lv * rv, lv * rd + ld * rv
    if isinstance(e, Div):
        lv, ld = _eval_dual(e.left, b, wrt)
        rv, rd = _eval_dual(e.right, b, wrt)
        if rv == 0.0:
            raise ExprDomainError("division by zero", e)
        return lv / rv, (ld * rv - lv * rd) / (rv * rv)
    if isinstance(e, Neg):
        v, d = _eval_dual(e.arg, b, wrt)
        return -v, -d
    if isinstance(e, Pow):
        v, d = _eval_dual(e.base, b, wrt)
        p = e.exponent
        if p == 0:
            return 1.0, 0.0
        if v == 0.0 and p < 1:
            raise ExprDomainError("zero base with non-positive exponent", e)
        return v ** p, p * v ** (p - 1) * d
    if isinstance(e, Call):
        v, d = _eval_dual(e.arg, b, wrt)
        if e.fn == "sin":
            return math.sin(v), math.cos(v) * d
        if e.fn == "cos":
            return math.cos(v), -math.sin(v) * d
        if e.fn == "exp":
            ev = math.exp(v)
            return ev, ev * d
        if e.fn == "sqrt":
            if v <= 0.0:
                raise NonDifferentiableError("sqrt not differentiable at <= 0", e)
            s = math.sqrt(v)
            return s, d / (2.0 * s)
        if e.fn == "abs":
            if v == 0.0:
                raise NonDifferentiableError("abs not differentiable at 0", e)
            return abs(v), math.copysign(1.0, v) * d
    raise TypeError(f"not an Expr: {e!r}")


# ---------------------------------------------------------------------------
# Substitution and programmatic construction


def substitute(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace variables by expression trees (used by pullbacks and term
    sections)."""
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, Num):
        return e
    if isinstance(e, (Add, Sub, Mul, Div)):
        return type(e)(substitute(e.left, mapping), substitute(e.right, mapping))
    if isinstance(e, Neg):
        return Neg(substitute(e.arg, mapping))
    if isinstance(e, Pow):
        return Pow(substitute(e.base, mapping), e.exponent)
    if isinstance(e, Call):
        return Call(e.fn, substitute(e.arg, mapping))
    raise TypeError(f"not an Expr: {e!r}")


def poly_expr(var: str, coeffs) -> Expr:
    """Polynomial c0 + c1*v + c2*v^2 + ... as an expression tree."""
    e: Expr = Num(float(coeffs[0]))
    for power, c in enumerate(coeffs[1:], start=1):
        c = float(c)
        if c == 0.0:
            continue
        term: Expr = Var(var) if power == 1 else Pow(Var(var), power)
        e = Add(e, Mul(Num(c), term))
    return e


# ---------------------------------------------------------------------------
# Compiled fast lane (vectorized over numpy arrays)

_NP_FN = {"sin": "_np.sin", "cos": "_np.cos", "exp": "_np.exp", "sqrt": "_np.sqrt",
          "abs": "_np.abs"}


def _emit(e: Expr) -> str:
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        return f"_v[{e.name!r}]"
    if isinstance(e, Add):
        return f"({_emit(e.left)} + {_emit(e.right)})"
    if isinstance(e, Sub):
        return f"({_emit(e.left)} - {_emit(e.right)})"
    if isinstance(e, Mul):
        return f"({_emit(e.left)} * {_emit(e.right)})"
    if isinstance(e, Div):
        return f"({_emit(e.left)} / {_emit(e.right)})"
    if isinstance(e, Neg):
        return f"(-{_emit(e.arg)})"
    if isinstance(e, Pow):
        return f"({_emit(e.base)} ** {e.exponent})"
    if isinstance(e, Call):
        return f"{_NP_FN[e.fn]}({_emit(e.arg)})"
    raise TypeError(f"not an Expr: {e!r}")


@lru_cache(maxsize=4096)
def compile_expr_raw(e: Expr):
    """Bare compiled form: no domain checking (NaN/inf pass through). Used in
    integration inner loops where the caller checks the final states once."""
    src = f"def _f(_v):\n    return {_emit(e)}\n"
    ns = {"_np": np}
    exec(compile(src, "<expr>", "exec"), ns)
    return ns["_f"]


@lru_cache(maxsize=4096)
def compile_expr(e: Expr):
    """Compile to a function of a dict of equal-shaped numpy arrays.

    The vector lane mirrors the recursive evaluator's arithmetic; domain
    violations surface as a single ExprDomainError after the fact (the scalar
    evaluator is the one that pinpoints offending subtrees).
    """
    raw = compile_expr_raw(e)

    def run(values):
        with np.errstate(all="ignore"):
            out = raw(values)
        out = np.asarray(out, dtype=float)
        if not np.all(np.isfinite(out)):
            raise ExprDomainError("non-finite result in vector evaluation", e)
        return out

    return run


def eval_expr_array(e: Expr, values) -> np.ndarray:
    """Evaluate over a dict of numpy arrays (broadcast elementwise)."""
    shape = None
    for v in values.values():
        shape = np.shape(v)
        break
    out = compile_expr(e)(values)
    if out.shape == () and shape:
        out = np.full(shape, float(out))
    return out


def eval_dual_array(e: Expr, values, dots) -> tuple:
    """Forward-mode evaluation over arrays: returns (value, derivative) where
    the derivative direction is given per variable in `dots` (missing = 0)."""
    if isinstance(e, Num):
        return np.float64(e.value), np.float64(0.0)
    if isinstance(e, Var):
        dv = dots.get(e.name)
        v = values[e.name]
        return np.asarray(v, float), (np.zeros_like(np.asarray(v, float)) if dv is None
                                      else np.asarray(dv, float))
    if isinstance(e, Add):
        lv, ld = eval_dual_array(e.left, values, dots)
        rv, rd = eval_dual_array(e.right, values, dots)
        return lv + rv, ld + rd
    if isinstance(e, Sub):
        lv, ld = eval_dual_array(e.left, values, dots)
        rv, rd = eval_dual_array(e.right, values, dots)
        return lv - rv, ld - rd
    if isinstance(e, Mul):
        lv, ld = eval_dual_array(e.left, values, dots)
        rv, rd = eval_dual_array(e.right, values, dots)
        return lv * rv, lv * rd + ld * rv
    if isinstance(e, Div):
        lv, ld = eval_dual_array(e.left, values, dots)
        rv, rd = eval_dual_array(e.right, values, dots)
        if np.any(rv == 0.0):
            raise ExprDomainError("division by zero", e)
        return lv / rv, (ld * rv - lv * rd) / (rv * rv)
    if isinstance(e, Neg):
        v, d = eval_dual_array(e.arg, values, dots)
        return -v, -d
    if isinstance(e, Pow):
        v, d = eval_dual_array(e.base, values, dots)
        p = e.exponent
        if p == 0:
            return np.ones_like(v), np.zeros_like(v)
        if p < 1 and np.any(v == 0.0):
            raise ExprDomainError("zero base with non-positive exponent", e)
        return v ** p, p * v ** (p - 1) * d
    if isinstance(e, Call):
        v, d = eval_dual_array(e.arg, values, dots)
        if e.fn == "sin":
            return np.sin(v), np.cos(v) * d
        if e.fn == "cos":
            return np.cos(v), -np.sin(v) * d
        if e.fn == "exp":
            ev = np.exp(v)
            return ev, ev * d
        if e.fn == "sqrt":
            if np.any(v <= 0.0):
                raise NonDifferentiableError("sqrt not differentiable at <= 0", e)
            s = np.sqrt(v)
            return s, d / (2.0 * s)
        if e.fn == "abs":
            if np.any(v == 0.0):
                raise NonDifferentiableError("abs not differentiable at 0", e)
            return np.abs(v), np.sign(v) * d
    raise TypeError(f"not an Expr: {e!r}")
