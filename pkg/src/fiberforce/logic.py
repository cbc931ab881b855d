"""First-order syntax and classical evaluation inside a single fiber.

Signatures, terms and formulas are plain immutable trees. A FiberStructure
interprets the symbols over one fiber R^k at a pinned base point: relations as
strict positivity of a guard expression (which makes every relation open by
construction), functions and constants as tuples of expressions.

Quantifiers of the classical (Tarski) evaluator range over a finite witness
pool supplied by the caller: fibers are uncountable, so truth of an
existential is certified by a pool member while a universal is approximate
relative to the pool.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .expr import Expr, eval_expr


class LogicError(ValueError):
    pass


class FormulaSyntaxError(LogicError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UnknownSymbolError(LogicError):
    pass


class ArityError(LogicError):
    pass


@dataclass(frozen=True)
class Signature:
    relations: tuple = ()   # (name, arity) pairs
    functions: tuple = ()   # (name, arity) pairs
    constants: tuple = ()   # names

    def __post_init__(self):
        names = [n for n, _ in self.relations] + [n for n, _ in self.functions] + list(self.constants)
        if len(names) != len(set(names)):
            raise LogicError("symbol names must be pairwise distinct")
        for name, arity in list(self.relations) + list(self.functions):
            if arity < 1:
                raise LogicError(f"arity of '{name}' must be positive")

    def relation_arity(self, name: str) -> int:
        for n, a in self.relations:
            if n == name:
                return a
        raise UnknownSymbolError(f"unknown relation '{name}'")

    def function_arity(self, name: str) -> int:
        for n, a in self.functions:
            if n == name:
                return a
        raise UnknownSymbolError(f"unknown function '{name}'")

    def is_relation(self, name):
        return any(n == name for n, _ in self.relations)

    def is_function(self, name):
        return any(n == name for n, _ in self.functions)

    def is_constant(self, name):
        return name in self.constants


# --- terms ---------------------------------------------------------------


@dataclass(frozen=True)
class Term:
    pass


@dataclass(frozen=True)
class TermVar(Term):
    index: int
    name: str = ""


@dataclass(frozen=True)
class TermConst(Term):
    name: str


@dataclass(frozen=True)
class TermApp(Term):
    name: str
    args: tuple


# --- formulas ------------------------------------------------------------


@dataclass(frozen=True)
class Formula:
    pass


@dataclass(frozen=True)
class Eq(Formula):
    left: Term
    right: Term


@dataclass(frozen=True)
class Rel(Formula):
    name: str
    args: tuple


@dataclass(frozen=True)
class Not(Formula):
    body: Formula


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Implies(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Exists(Formula):
    var: str
    body: Formula


@dataclass(frozen=True)
class Forall(Formula):
    var: str
    body: Formula


def neighborhood_depth(phi: Formula, count_exists: bool = False) -> int:
    """Nesting depth of the clauses that recurse over a neighborhood
    (negation, implication, universal; existential only under the symmetric
    variant)."""
    if isinstance(phi, (Eq, Rel)):
        return 0
    if isinstance(phi, Not):
        return 1 + neighborhood_depth(phi.body, count_exists)
    if isinstance(phi, (And, Or)):
        return max(neighborhood_depth(phi.left, count_exists),
                   neighborhood_depth(phi.right, count_exists))
    if isinstance(phi, Implies):
        return 1 + max(neighborhood_depth(phi.left, count_exists),
                       neighborhood_depth(phi.right, count_exists))
    if isinstance(phi, Exists):
        return (1 if count_exists else 0) + neighborhood_depth(phi.body, count_exists)
    if isinstance(phi, Forall):
        return 1 + neighborhood_depth(phi.body, count_exists)
    raise TypeError(f"not a Formula: {phi!r}")


def is_positive_eq_free(phi: Formula) -> bool:
    """True when the formula uses only disjunction, conjunction, existentials
    and relation atoms (no equality, negation, implication or universal)."""
    if isinstance(phi, Rel):
        return True
    if isinstance(phi, (And, Or)):
        return is_positive_eq_free(phi.left) and is_positive_eq_free(phi.right)
    if isinstance(phi, Exists):
        return is_positive_eq_free(phi.body)
    return False


def formula_to_source(phi: Formula) -> str:
    def term(t: Term) -> str:
        if isinstance(t, TermVar):
            return t.name or f"x{t.index + 1}"
        if isinstance(t, TermConst):
            return t.name
        if isinstance(t, TermApp):
            return f"{t.name}({', '.join(term(a) for a in t.args)})"
        raise TypeError(f"not a Term: {t!r}")

    if isinstance(phi, Eq):
        return f"{term(phi.left)} = {term(phi.right)}"
    if isinstance(phi, Rel):
        return f"{phi.name}({', '.join(term(a) for a in phi.args)})"
    if isinstance(phi, Not):
        return f"!({formula_to_source(phi.body)})"
    if isinstance(phi, And):
        return f"({formula_to_source(phi.left)}) & ({formula_to_source(phi.right)})"
    if isinstance(phi, Or):
        return f"({formula_to_source(phi.left)}) | ({formula_to_source(phi.right)})"
    if isinstance(phi, Implies):
        return f"({formula_to_source(phi.left)}) -> ({formula_to_source(phi.right)})"
    if isinstance(phi, Exists):
        return f"exists {phi.var}. ({formula_to_source(phi.body)})"
    if isinstance(phi, Forall):
        return f"forall {phi.var}. ({formula_to_source(phi.body)})"
    raise TypeError(f"not a Formula: {phi!r}")


# --- formula parser --------------------------------------------------------
#
# Grammar (precedence ! > & > | > ->, implication right-associative):
#   formula  := or_f ('->' formula)?
#   or_f     := and_f ('|' and_f)*
#   and_f    := unary ('&' unary)*
#   unary    := '!' unary | 'exists' IDENT '.' formula
#             | 'forall' IDENT '.' formula | '(' formula ')' | atom
#   atom     := REL '(' term (',' term)* ')' | term '=' term
#   term     := FUNC '(' term (',' term)* ')' | CONST | VARIABLE
#
# '<->' is desugared at parse time into the conjunction of both implications.


class _FTokens:
    def __init__(self, source: str):
        self.source = source
        self.pos = 0

    def next(self):
        src = self.source
        while self.pos < len(src) and src[self.pos].isspace():
            self.pos += 1
        start = self.pos
        if self.pos >= len(src):
            return ("eof", "", start)
        ch = src[self.pos]
        if src.startswith("<->", self.pos):
            self.pos += 3
            return ("iff", "<->", start)
        if src.startswith("->", self.pos):
            self.pos += 2
            return ("implies", "->", start)
        if ch in "!&|()=.,":
            self.pos += 1
            kinds = {"!": "not", "&": "and", "|": "or", "(": "lparen", ")": "rparen",
                     "=": "eq", ".": "dot", ",": "comma"}
            return (kinds[ch], ch, start)
        if ch.isalpha() or ch == "_":
            i = self.pos
            while i < len(src) and (src[i].isalnum() or src[i] == "_"):
                i += 1
            word = src[start:i]
            self.pos = i
            if word == "exists":
                return ("exists", word, start)
            if word == "forall":
                return ("forall", word, start)
            return ("ident", word, start)
        raise FormulaSyntaxError(f"unexpected character {ch!r}", start)


class _FormulaParser:
    def __init__(self, source: str, sig: Signature, free_vars: Sequence[str]):
        self.sig = sig
        self.free = list(free_vars)
        if len(self.free) != len(set(self.free)):
            raise LogicError("free variable names must be distinct")
        self.toks = _FTokens(source)
        self.cur = self.toks.next()
        self.scope = []  # bound variable names, innermost last

    def advance(self):
        self.cur = self.toks.next()

    def expect(self, kind: str, what: str):
        k, v, off = self.cur
        if k != kind:
            raise FormulaSyntaxError(f"expected {what}, got {v!r}", off)
        self.advance()

    def parse(self) -> Formula:
        phi = self.formula()
        k, v, off = self.cur
        if k != "eof":
            raise FormulaSyntaxError(f"trailing input {v!r}", off)
        return phi

    def formula(self) -> Formula:
        left = self.or_f()
        k, _, _ = self.cur
        if k == "implies":
            self.advance()
            right = self.formula()
            return Implies(left, right)
        if k == "iff":
            self.advance()
            right = self.formula()
            return And(Implies(left, right), Implies(right, left))
        return left

    def or_f(self) -> Formula:
        e = self.and_f()
        while self.cur[0] == "or":
            self.advance()
            e = Or(e, self.and_f())
        return e

    def and_f(self) -> Formula:
        e = self.unary()
        while self.cur[0] == "and":
            self.advance()
            e = And(e, self.unary())
        return e

    def unary(self) -> Formula:
        k, v, off = self.cur
        if k == "not":
            self.advance()
            return Not(self.unary())
        if k in ("exists", "forall"):
            self.advance()
            vk, name, voff = self.cur
            if vk != "ident":
                raise FormulaSyntaxError("expected a variable name after quantifier", voff)
            if self.sig.is_relation(name) or self.sig.is_function(name) or self.sig.is_constant(name):
                raise FormulaSyntaxError(f"'{name}' is a signature symbol, not a variable", voff)
            self.advance()
            self.expect("dot", "'.' after quantified variable")
            self.scope.append(name)
            body = self.formula()
            self.scope.pop()
            return Exists(name, body) if k == "exists" else Forall(name, body)
        if k == "lparen":
            self.advance()
            phi = self.formula()
            self.expect("rparen", "')'")
            return phi
        return self.atom()

    def atom(self) -> Formula:
        k, name, off = self.cur
        if k != "ident":
            raise FormulaSyntaxError(f"expected an atom, got {name!r}", off)
        if self.sig.is_relation(name):
            self.advance()
            args = self.term_list(name, self.sig.relation_arity(name))
            return Rel(name, args)
        left = self.term()
        self.expect("eq", "'='")
        right = self.term()
        return Eq(left, right)

    def term_list(self, name: str, arity: int) -> tuple:
        self.expect("lparen", f"'(' after '{name}'")
        args = [self.term()]
        while self.cur[0] == "comma":
            self.advance()
            args.append(self.term())
        self.expect("rparen", "')'")
        if len(args) != arity:
            raise ArityError(f"'{name}' expects {arity} argument(s), got {len(args)}")
        return tuple(args)

    def term(self) -> Term:
        k, name, off = self.cur
        if k != "ident":
            raise FormulaSyntaxError(f"expected a term, got {name!r}", off)
        if self.sig.is_function(name):
            self.advance()
            args = self.term_list(name, self.sig.function_arity(name))
            return TermApp(name, args)
        self.advance()
        if self.sig.is_constant(name):
            return TermConst(name)
        if self.sig.is_relation(name):
            raise FormulaSyntaxError(f"relation '{name}' used as a term", off)
        # innermost binding wins; bound variables extend the assignment list
        for depth in range(len(self.scope) - 1, -1, -1):
            if self.scope[depth] == name:
                return TermVar(len(self.free) + depth, name)
        if name in self.free:
            return TermVar(self.free.index(name), name)
        raise UnknownSymbolError(f"unknown symbol '{name}'")


def parse_formula(source: str, sig: Signature, free_vars: Sequence[str]) -> Formula:
    """Parse a formula; variable occurrences resolve to indices into the
    assignment list (free variables first, quantifier bindings appended in
    binding order)."""
    return _FormulaParser(source, sig, free_vars).parse()


def collect_free_identifiers(source: str, sig: Signature) -> list:
    """Identifiers that are neither signature symbols nor bound variables, in
    first-appearance order. Used by the CLI to bind formula arguments."""
    toks = _FTokens(source)
    seen: list = []
    bound: list = []
    prev_quantifier = False
    while True:
        k, v, _ = toks.next()
        if k == "eof":
            break
        if k in ("exists", "forall"):
            prev_quantifier = True
            continue
        if k == "ident":
            if prev_quantifier:
                bound.append(v)
            elif (not sig.is_relation(v) and not sig.is_function(v)
                  and not sig.is_constant(v) and v not in bound and v not in seen):
                seen.append(v)
        prev_quantifier = False
    return seen


# --- fiber structures ------------------------------------------------------


def fiber_arg_binding(n_base: int, fiber_dim: int, arity: int, base_point, args):
    """Variable binding for a symbol interpretation: base variables x1..xn,
    argument components y{j}{i}; for unary symbols plain y{i} aliases y1{i}."""
    b = {f"x{i + 1}": float(base_point[i]) for i in range(n_base)}
    for j in range(arity):
        for i in range(fiber_dim):
            b[f"y{j + 1}{i + 1}"] = float(args[j][i])
    if arity == 1:
        for i in range(fiber_dim):
            b.setdefault(f"y{i + 1}", float(args[0][i]))
    return b


@dataclass(frozen=True)
class FiberStructure:
    """The structure carried by the fiber over one pinned base point."""

    base_dim: int
    fiber_dim: int
    signature: Signature
    guards: dict          # relation name -> guard Expr (holds iff guard > 0)
    funcs: dict           # function name -> tuple of fiber_dim Exprs
    consts: dict          # constant name -> tuple of fiber_dim Exprs (base vars only)
    base_point: tuple

    def guard_value(self, name: str, args) -> float:
        arity = self.signature.relation_arity(name)
        b = fiber_arg_binding(self.base_dim, self.fiber_dim, arity, self.base_point, args)
        return eval_expr(self.guards[name], b)

    def relation_holds(self, name: str, args) -> bool:
        return self.guard_value(name, args) > 0.0

    def function_value(self, name: str, args) -> np.ndarray:
        arity = self.signature.function_arity(name)
        b = fiber_arg_binding(self.base_dim, self.fiber_dim, arity, self.base_point, args)
        return np.array([eval_expr(c, b) for c in self.funcs[name]], dtype=float)

    def constant_value(self, name: str) -> np.ndarray:
        b = {f"x{i + 1}": float(self.base_point[i]) for i in range(self.base_dim)}
        return np.array([eval_expr(c, b) for c in self.consts[name]], dtype=float)


def eval_term(t: Term, fs: FiberStructure, assignment) -> np.ndarray:
    """Interpret a term over the fiber: variables look up the assignment,
    constants and functions use the structure's expressions at the pinned
    base point."""
    if isinstance(t, TermVar):
        if t.index >= len(assignment):
            raise LogicError(f"assignment too short for variable index {t.index}")
        return np.asarray(assignment[t.index], dtype=float)
    if isinstance(t, TermConst):
        return fs.constant_value(t.name)
    if isinstance(t, TermApp):
        args = [eval_term(a, fs, assignment) for a in t.args]
        return fs.function_value(t.name, args)
    raise TypeError(f"not a Term: {t!r}")


def tarski_eval(phi: Formula, fs: FiberStructure, assignment, witness_pool,
                eq_tol: float = 0.0) -> bool:
    """Classical truth over the fiber structure; quantifiers range over the
    finite witness pool. Enlarging the pool can only flip an existential to
    true or a universal to false."""
    assignment = [np.asarray(a, dtype=float) for a in assignment]
    if isinstance(phi, Eq):
        lv = eval_term(phi.left, fs, assignment)
        rv = eval_term(phi.right, fs, assignment)
        return bool(np.max(np.abs(lv - rv)) <= eq_tol)
    if isinstance(phi, Rel):
        args = [eval_term(a, fs, assignment) for a in phi.args]
        return fs.relation_holds(phi.name, args)
    if isinstance(phi, Not):
        return not tarski_eval(phi.body, fs, assignment, witness_pool, eq_tol)
    if isinstance(phi, And):
        return (tarski_eval(phi.left, fs, assignment, witness_pool, eq_tol)
                and tarski_eval(phi.right, fs, assignment, witness_pool, eq_tol))
    if isinstance(phi, Or):
        return (tarski_eval(phi.left, fs, assignment, witness_pool, eq_tol)
                or tarski_eval(phi.right, fs, assignment, witness_pool, eq_tol))
    if isinstance(phi, Implies):
        return ((not tarski_eval(phi.left, fs, assignment, witness_pool, eq_tol))
                or tarski_eval(phi.right, fs, assignment, witness_pool, eq_tol))
    if isinstance(phi, Exists):
        return any(tarski_eval(phi.body, fs, assignment + [np.asarray(w, float)],
                               witness_pool, eq_tol)
                   for w in witness_pool)
    if isinstance(phi, Forall):
        return all(tarski_eval(phi.body, fs, assignment + [np.asarray(w, float)],
                               witness_pool, eq_tol)
                   for w in witness_pool)
    raise TypeError(f"not a Formula: {phi!r}")
