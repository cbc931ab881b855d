"""Seeded random instance pools for the two theorem property suites.

Both pools draw coefficients and points from coarse dyadic lattices so the
quantities the verdicts hinge on have margins far above rounding noise and
above the resolution of the finite radius schedule. The stability pool
additionally rejects instances whose smallest positive atom margin over the
witness pool is below 0.1: the finite schedule certifies stability only down
to slope * smallest-radius (about 0.08 for this family), while the openness
argument still guarantees some neighborhood exists for any positive margin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bundle import BaseBox, FiberBundle, Section, SmoothMap, StructureBundle
from .expr import Add, Expr, Mul, Num, Pow, Var
from .forcing import (BundleSpace, ForcingEngine, NeighborhoodPolicy,
                      SectionProvider, positive_stability_check)
from .logic import Rel, Signature, parse_formula
from .parallel import build_path_family, check_pullback_compatibility
from .transport import Connection

_COEFFS = (-2.0, -1.0, -0.5, 0.5, 1.0, 2.0)
_POINTS = (-0.5, -0.25, 0.0, 0.25, 0.5)
_VALUES = (-1.0, -0.5, 0.0, 0.5, 1.0)


def _lattice_poly(rng, variables) -> Expr:
    """c0 + sum of c*v and c*v^2 terms with half-unit coefficients."""
    e: Expr = Num(float(rng.choice(_COEFFS)))
    n_terms = int(rng.integers(1, 4))
    for _ in range(n_terms):
        v = str(rng.choice(variables))
        c = float(rng.choice(_COEFFS))
        term: Expr = Var(v) if rng.random() < 0.5 else Pow(Var(v), 2)
        e = Add(e, Mul(Num(c), term))
    return e


def _lift_entry(rng) -> Expr:
    choice = rng.integers(0, 6)
    if choice == 0:
        return Num(0.0)
    if choice == 1:
        return Num(1.0)
    if choice == 2:
        return Num(-1.0)
    if choice == 3:
        return Num(0.5)
    if choice == 4:
        return Var("y1")
    return Mul(Num(0.5), Var("x1"))


def _map_component(rng, source_dim: int) -> Expr:
    v = f"x{int(rng.integers(1, source_dim + 1))}"
    c0 = float(rng.choice((0.0, 0.5, -0.5)))
    c1 = float(rng.choice((0.5, -0.5, 1.0, -1.0)))
    c2 = float(rng.choice((0.0, 0.25, -0.25)))
    e: Expr = Add(Num(c0), Mul(Num(c1), Var(v)))
    if c2:
        e = Add(e, Mul(Num(c2), Pow(Var(v), 2)))
    return e


_PULLBACK_TEMPLATES = {
    1: ("R(x1)", "!R(x1)", "exists v. R(v)"),
    2: ("R(x1) & R(x2)", "R(x1) | R(x2)", "x1 = x2", "R(x1) -> R(x2)"),
}


@dataclass
class PoolReport:
    trials: int
    passed: int
    failures: list

    @property
    def ok(self) -> bool:
        return self.passed == self.trials


def run_pullback_pool(trials: int, seed: int, pol: NeighborhoodPolicy | None = None) -> PoolReport:
    """Random (guard, lift field, map, formula) instances; both evaluation
    routes of the compatibility identity must agree on every one."""
    rng = np.random.default_rng(seed)
    failures = []
    passed = 0
    for trial in range(trials):
        d = int(rng.integers(1, 3))
        n = int(rng.integers(1, 3))
        base_box = BaseBox((-2.0,) * n, (2.0,) * n)
        source_box = BaseBox((-1.0,) * d, (1.0,) * d)
        sig = Signature(relations=(("R", 1),))
        guard_vars = tuple(f"x{i + 1}" for i in range(n)) + ("y11",)
        guard = _lattice_poly(rng, guard_vars)
        sb = StructureBundle(FiberBundle(base_box, 1), sig, {"R": guard}, {}, {})
        entries = ((tuple(_lift_entry(rng) for _ in range(n))),)
        conn = Connection(FiberBundle(base_box, 1), entries)
        f = SmoothMap(d, n, tuple(_map_component(rng, d) for _ in range(n)))
        n0 = np.array([float(rng.choice(_POINTS)) for _ in range(d)])
        m = f(n0)
        nargs = int(rng.integers(1, 3))
        template = str(rng.choice(_PULLBACK_TEMPLATES[nargs]))
        phi = parse_formula(template, sig, [f"x{i + 1}" for i in range(nargs)])
        e_tuple = np.array([[float(rng.choice(_VALUES))] for _ in range(nargs)])
        fam = build_path_family(n0, source_box, seed=seed * 1000 + trial)
        local = pol or NeighborhoodPolicy(fiber_lows=(-1.0,), fiber_highs=(1.0,),
                                          fiber_grid=5, seed=seed)
        ok, details = check_pullback_compatibility(
            sb, conn, f, source_box, m, e_tuple, phi, fam, [n0], local)
        if ok:
            passed += 1
        else:
            failures.append({"trial": trial, "formula": template, "details": details})
    return PoolReport(trials, passed, failures)


_STABILITY_TEMPLATES = {
    1: ("R(x1)", "exists v. R(v)", "exists v. (R(v) & R(x1))"),
    2: ("R(x1) & R(x2)", "R(x1) | R(x2)"),
}

_MARGIN_FLOOR = 0.1


def _atom_margins(sb, phi, sections, m, pol) -> list:
    """Guard values of every relation atom template over every witness-pool
    assignment at the point (the quantities stability hinges on)."""
    space = BundleSpace(sb)
    providers = [SectionProvider(s) for s in sections]
    engine = ForcingEngine(space, pol, providers)
    pt = np.asarray(m, dtype=float)[None, :]
    pool = [w.values(space, pt)[0] for w in engine.family()]
    values = []
    arity = sb.signature.relation_arity("R")
    if arity == 1:
        for a in pool:
            args = np.asarray(a, dtype=float)[None, None, :]
            values.append(float(space.interp.guard("R", pt, args)))
    return values


def run_stability_pool(trials: int, seed: int, pol: NeighborhoodPolicy | None = None) -> PoolReport:
    """Random positive =-free formulas over random open-guard structures:
    classical truth at the point must imply the forcing verdict there."""
    rng = np.random.default_rng(seed)
    failures = []
    passed = 0
    produced = 0
    attempts = 0
    while produced < trials and attempts < trials * 50:
        attempts += 1
        n = int(rng.integers(1, 3))
        base_box = BaseBox((-2.0,) * n, (2.0,) * n)
        sig = Signature(relations=(("R", 1),))
        guard_vars = tuple(f"x{i + 1}" for i in range(n)) + ("y11",)
        guard = _lattice_poly(rng, guard_vars)
        sb = StructureBundle(FiberBundle(base_box, 1), sig, {"R": guard}, {}, {})
        nargs = int(rng.integers(1, 3))
        sections = []
        for _ in range(nargs):
            a = float(rng.choice((0.0, 0.5, -0.5, 1.0, -1.0)))
            b = float(rng.choice((0.0, 0.5, -0.5, 1.0, -1.0)))
            comp = Add(Num(a), Mul(Num(b), Var("x1")))
            sections.append(Section(base_box, (comp,)))
        m = np.array([float(rng.choice((-0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75)))
                      for _ in range(n)])
        template = str(rng.choice(_STABILITY_TEMPLATES[nargs]))
        phi = parse_formula(template, sig, [f"x{i + 1}" for i in range(nargs)])
        local = pol or NeighborhoodPolicy(fiber_lows=(-1.0,), fiber_highs=(1.0,),
                                          fiber_grid=5, seed=seed)
        margins = _atom_margins(sb, phi, sections, m, local)
        if any(0.0 < v < _MARGIN_FLOOR for v in margins):
            continue  # below the schedule's certifiable resolution
        produced += 1
        if positive_stability_check(sb, phi, sections, m, local):
            passed += 1
        else:
            failures.append({"trial": produced - 1, "formula": template,
                             "point": m.tolist()})
    return PoolReport(produced, passed, failures)
