"""Pointwise forcing under the sampled neighborhood semantics.

"There exists an open neighborhood U of m" is realized as "some radius of a
finite halving schedule", and "for all u in U" as "all deterministic samples
of that ball, intersected with the base box". The sample sets are nested
across the schedule (see sampling), so the check is monotone in the radius by
construction, and the center is always among the samples. This surrogate errs
toward NotForced on thin truth sets, the polarity every shipped example needs.

Quantifier clauses follow the asymmetry of the definition as printed: the
existential has no neighborhood (a witness section at the point certifies it);
the universal carries one. A depth budget bounds the neighborhood-recursive
clauses (negation, implication, universal); exhausting it is a hard error,
never a silent verdict.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .bundle import BaseBox, Section, StructureBundle, fiber_structure
from .expr import compile_expr
from .logic import (And, Eq, Exists, Forall, Formula, Implies, LogicError, Not,
                    Or, Rel, Term, TermApp, TermConst, TermVar, is_positive_eq_free,
                    tarski_eval)
from .sampling import BallSampler


class ForcingError(ValueError):
    pass


class DepthExhaustedError(ForcingError):
    """The neighborhood recursion exceeded the policy budget; the verdict is
    unknown, which is an error rather than a silent NotForced."""


class NonPositiveFormulaError(ForcingError):
    pass


@dataclass(frozen=True)
class NeighborhoodPolicy:
    """Knobs of the sampled semantics.

    Radii eps0 * 2^-k for k = 0..halvings; `samples` points per annulus of the
    nested master set; `depth` bounds negation/implication/universal nesting.
    The fiber window and its per-axis resolution generate the constant witness
    sections for the quantifier clauses.
    """

    eps0: float = 0.5
    halvings: int = 8
    samples: int = 64
    depth: int = 3
    tol_eq: float = 1e-9
    fiber_lows: tuple = (-1.0,)
    fiber_highs: tuple = (1.0,)
    fiber_grid: int = 5
    seed: int = 7
    exists_neighborhood: bool = False
    step: float = 1e-3
    grid: float = 0.01

    def __post_init__(self):
        if not (self.eps0 > 0 and self.halvings >= 1 and self.samples >= 8
                and self.depth >= 1):
            raise ForcingError("policy needs eps0 > 0, halvings >= 1, samples >= 8, depth >= 1")

    @property
    def radii(self) -> tuple:
        return tuple(self.eps0 * 2.0 ** (-k) for k in range(self.halvings + 1))

    def sampler(self) -> BallSampler:
        return BallSampler(self.eps0, self.halvings, self.samples, self.seed)

    def fiber_box_values(self) -> list:
        """Lattice of constant-section values over the fiber window."""
        axes = []
        for lo, hi in zip(self.fiber_lows, self.fiber_highs):
            if self.fiber_grid == 1:
                axes.append(np.array([(lo + hi) / 2.0]))
            else:
                step = (hi - lo) / (self.fiber_grid - 1)
                axes.append(lo + step * np.arange(self.fiber_grid))
        mesh = np.meshgrid(*axes, indexing="ij")
        return [np.array(v) for v in np.stack([m.ravel() for m in mesh], axis=-1)]


@dataclass(frozen=True)
class ForcingVerdict:
    forced: bool
    witness_eps: float | None
    samples: int
    depth: int

    @property
    def decision(self) -> str:
        return "Forced" if self.forced else "NotForced"


# ---------------------------------------------------------------------------
# Interpretation tables compiled for batch evaluation


class InterpTables:
    """Compiled guard/function/constant tables of a structure bundle,
    evaluated over batches of base points."""

    def __init__(self, sb: StructureBundle):
        self.signature = sb.signature
        self.base_dim = sb.base.dim
        self.fiber_dim = sb.fiber_dim
        self._guards = {name: compile_expr(g) for name, g in sb.guards.items()}
        self._funcs = {name: tuple(compile_expr(c) for c in comps)
                       for name, comps in sb.funcs.items()}
        self._consts = {name: tuple(compile_expr(c) for c in comps)
                        for name, comps in sb.consts.items()}

    def _env(self, base_pts: np.ndarray, args: np.ndarray | None, arity: int) -> dict:
        env = {f"x{i + 1}": base_pts[:, i] for i in range(self.base_dim)}
        if args is not None:
            for j in range(arity):
                for i in range(self.fiber_dim):
                    env[f"y{j + 1}{i + 1}"] = args[:, j, i]
            if arity == 1:
                for i in range(self.fiber_dim):
                    env.setdefault(f"y{i + 1}", args[:, 0, i])
        return env

    def guard(self, name: str, base_pts: np.ndarray, args: np.ndarray) -> np.ndarray:
        arity = self.signature.relation_arity(name)
        vals = self._guards[name](self._env(base_pts, args, arity))
        return np.broadcast_to(vals, (len(base_pts),))

    def func(self, name: str, base_pts: np.ndarray, args: np.ndarray) -> np.ndarray:
        arity = self.signature.function_arity(name)
        env = self._env(base_pts, args, arity)
        cols = [np.broadcast_to(c(env), (len(base_pts),)) for c in self._funcs[name]]
        return np.stack(cols, axis=-1)

    def const(self, name: str, base_pts: np.ndarray) -> np.ndarray:
        env = self._env(base_pts, None, 0)
        cols = [np.broadcast_to(c(env), (len(base_pts),)) for c in self._consts[name]]
        return np.stack(cols, axis=-1)


# ---------------------------------------------------------------------------
# Spaces: where the neighborhood balls live


class BundleSpace:
    """Forcing over a structure bundle itself: balls live in the base box."""

    def __init__(self, sb: StructureBundle):
        self.sb = sb
        self.interp = InterpTables(sb)
        self.ball_dim = sb.base.dim
        self.lo = np.array(sb.base.lows, dtype=float)
        self.hi = np.array(sb.base.highs, dtype=float)
        self.fiber_dim = sb.fiber_dim
        self.signature = sb.signature

    def base_points(self, pts: np.ndarray) -> np.ndarray:
        return pts


def _knot_weights(params: np.ndarray, ts: np.ndarray, uniform_step: float | None):
    """Lower knot index and interpolation weight for query parameters."""
    ts = np.clip(ts, params[0], params[-1])
    if uniform_step is not None:
        idx = np.clip(((ts - params[0]) / uniform_step).astype(int), 0, len(params) - 2)
    else:
        idx = np.clip(np.searchsorted(params, ts, side="right") - 1, 0, len(params) - 2)
    t0 = params[idx]
    span = params[idx + 1] - t0
    w = np.where(span > 0, (ts - t0) / np.where(span > 0, span, 1.0), 0.0)
    return idx, w


def _uniform_step(params: np.ndarray) -> float | None:
    if len(params) < 3:
        return None
    steps = np.diff(params)
    first = steps[0]
    if first > 0 and np.all(np.abs(steps - first) <= 1e-12 * max(1.0, abs(first))):
        return float(first)
    return None


class PathSpace:
    """Forcing along a path with transported sections: balls live in the
    parameter interval; base points and section values interpolate the
    integration knots (piecewise linear, knots at the RK4 resolution)."""

    def __init__(self, interp: InterpTables, params: np.ndarray,
                 positions: np.ndarray, lo: float, hi: float):
        self.interp = interp
        self.params = np.asarray(params, dtype=float)
        self.positions = np.asarray(positions, dtype=float)
        order = np.argsort(self.params)
        self.params = self.params[order]
        self.positions = self.positions[order]
        self._step = _uniform_step(self.params)
        self.ball_dim = 1
        self.lo = np.array([lo])
        self.hi = np.array([hi])
        self.fiber_dim = interp.fiber_dim
        self.signature = interp.signature

    def _interp(self, table: np.ndarray, ts: np.ndarray) -> np.ndarray:
        idx, w = _knot_weights(self.params, ts, self._step)
        flat = table.reshape(len(self.params), -1)
        out = flat[idx] * (1.0 - w)[:, None] + flat[idx + 1] * w[:, None]
        return out.reshape((len(ts),) + table.shape[1:])

    def base_points(self, pts: np.ndarray) -> np.ndarray:
        return self._interp(self.positions, pts[:, 0])


# ---------------------------------------------------------------------------
# Section-value providers


class SectionProvider:
    """Expression-backed section (usable on bundle spaces)."""

    def __init__(self, section: Section):
        self.section = section
        self._fns = tuple(compile_expr(c) for c in section.components)

    def values(self, space, pts: np.ndarray) -> np.ndarray:
        base = space.base_points(pts)
        env = {f"x{i + 1}": base[:, i] for i in range(base.shape[1])}
        cols = [np.broadcast_to(f(env), (len(pts),)) for f in self._fns]
        return np.stack(cols, axis=-1)


class LiftProvider:
    """Transported section sampled on the integration knots of a path."""

    def __init__(self, params: np.ndarray, values: np.ndarray):
        self.params = np.asarray(params, dtype=float)
        order = np.argsort(self.params)
        self.params = self.params[order]
        self.table = np.asarray(values, dtype=float)[order]
        self._step = _uniform_step(self.params)

    def values(self, space, pts: np.ndarray) -> np.ndarray:
        idx, w = _knot_weights(self.params, pts[:, 0], self._step)
        return self.table[idx] * (1.0 - w)[:, None] + self.table[idx + 1] * w[:, None]


class ConstantProvider:
    def __init__(self, value):
        self.value = np.asarray(value, dtype=float).ravel()

    def values(self, space, pts: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.value, (len(pts), len(self.value))).copy()


class TermProvider:
    """Witness section given by a term over other providers (the term-section
    members of the quantifier family)."""

    def __init__(self, term: Term, base_providers: tuple):
        self.term = term
        self.base_providers = tuple(base_providers)

    def values(self, space, pts: np.ndarray) -> np.ndarray:
        return eval_term_values(self.term, space, pts, self.base_providers)


def eval_term_values(term: Term, space, pts: np.ndarray, providers) -> np.ndarray:
    if isinstance(term, TermVar):
        if term.index >= len(providers):
            raise LogicError(f"no section bound for variable index {term.index}")
        return providers[term.index].values(space, pts)
    if isinstance(term, TermConst):
        return space.interp.const(term.name, space.base_points(pts))
    if isinstance(term, TermApp):
        args = np.stack([eval_term_values(a, space, pts, providers) for a in term.args],
                        axis=1)
        return space.interp.func(term.name, space.base_points(pts), args)
    raise TypeError(f"not a Term: {term!r}")


def witness_family(space, providers, pol: NeighborhoodPolicy) -> list:
    """Sections the quantifier clauses range over: the argument sections, the
    constant sections through the fiber window lattice, the constant symbols,
    and one level of function applications over the argument sections."""
    family: list = list(providers)
    for value in pol.fiber_box_values():
        if len(value) == space.fiber_dim:
            family.append(ConstantProvider(value))
    for name in space.signature.constants:
        family.append(TermProvider(TermConst(name), ()))
    for name, arity in space.signature.functions:
        combos = [()]
        for _ in range(arity):
            combos = [c + (p,) for c in combos for p in providers]
            if len(combos) > 16:
                combos = combos[:16]
        for combo in combos:
            if combo:
                term = TermApp(name, tuple(TermVar(i) for i in range(arity)))
                family.append(TermProvider(term, combo))
    return family


# ---------------------------------------------------------------------------
# The forcing engine


class ForcingEngine:
    def __init__(self, space, pol: NeighborhoodPolicy, providers: Sequence):
        self.space = space
        self.pol = pol
        self.providers = list(providers)
        self.sampler = pol.sampler()
        self.samples_evaluated = 0
        self.depth_used = 0
        self._family = None

    def family(self) -> list:
        if self._family is None:
            self._family = witness_family(self.space, self.providers, self.pol)
        return self._family

    # -- atoms -------------------------------------------------------------

    def atom_ok(self, pts: np.ndarray, phi: Formula, providers) -> np.ndarray:
        """Tarski truth of an atomic formula at a batch of points."""
        self.samples_evaluated += len(pts)
        if isinstance(phi, Eq):
            lv = eval_term_values(phi.left, self.space, pts, providers)
            rv = eval_term_values(phi.right, self.space, pts, providers)
            return np.max(np.abs(lv - rv), axis=1) <= self.pol.tol_eq
        if isinstance(phi, Rel):
            args = np.stack([eval_term_values(a, self.space, pts, providers)
                             for a in phi.args], axis=1)
            base = self.space.base_points(pts)
            return self.space.interp.guard(phi.name, base, args) > 0.0
        raise TypeError(f"not an atom: {phi!r}")

    def _force_atom(self, center: np.ndarray, phi: Formula, providers) -> ForcingVerdict:
        if not bool(self.atom_ok(center[None, :], phi, providers)[0]):
            # the center sits in every scheduled sample set
            return ForcingVerdict(False, None, self.samples_evaluated, self.depth_used)
        master = self.sampler.master(center, self.space.lo, self.space.hi)
        ok = np.zeros(len(master.points), dtype=bool)
        ok[master.in_box] = self.atom_ok(master.points[master.in_box], phi, providers)
        for k, eps in enumerate(self.pol.radii):
            idx = master.indices_within(k)
            keep = master.in_box[idx]
            if np.all(ok[idx][keep]):
                return ForcingVerdict(True, eps, self.samples_evaluated, self.depth_used)
        return ForcingVerdict(False, None, self.samples_evaluated, self.depth_used)

    def force_atom_many(self, centers: np.ndarray, phi: Formula, providers) -> np.ndarray:
        """Ball-forcing of an atom at many centers in one vectorized pass.

        The center belongs to every scheduled sample set, so centers where
        the atom already fails are NotForced without building their balls."""
        C = len(centers)
        out = np.zeros(C, dtype=bool)
        live = np.flatnonzero(self.atom_ok(centers, phi, providers))
        if not len(live):
            return out
        points, in_box = self.sampler.points_many(centers[live], self.space.lo,
                                                  self.space.hi)
        L, M = in_box.shape
        flat_pts = points.reshape(L * M, -1)
        flat_box = in_box.reshape(L * M)
        ok = np.zeros(L * M, dtype=bool)
        if np.any(flat_box):
            ok[flat_box] = self.atom_ok(flat_pts[flat_box], phi, providers)
        ok = ok.reshape(L, M)
        passing = ok | ~in_box
        forced = np.zeros(L, dtype=bool)
        N = self.pol.samples
        for k in range(self.pol.halvings + 1):
            start = 1 + k * N
            forced |= np.all(passing[:, start:], axis=1)
        out[live] = forced
        return out

    # -- neighborhood clauses ------------------------------------------------

    def _neighborhood_all(self, center: np.ndarray, sub_ok) -> ForcingVerdict:
        """Shared skeleton for the neighborhood clauses: Forced iff the
        per-sample condition holds on all in-box samples of some scheduled
        ball. The innermost sample set is a subset of every scheduled set, so
        a failure there refutes all radii at once; it is evaluated first
        (center foremost) to keep refutations cheap. The verdict does not
        depend on this order."""
        master = self.sampler.master(center, self.space.lo, self.space.hi)
        inner = master.indices_within(self.pol.halvings)
        inner = inner[master.in_box[inner]]
        chunks = [inner[:1], inner[1:]]
        ok = np.zeros(len(master.points), dtype=bool)
        for chunk in chunks:
            if not len(chunk):
                continue
            got = sub_ok(master.points[chunk])
            if not np.all(got):
                return ForcingVerdict(False, None, self.samples_evaluated, self.depth_used)
            ok[chunk] = got
        outer = np.setdiff1d(np.flatnonzero(master.in_box), inner, assume_unique=False)
        if len(outer):
            ok[outer] = sub_ok(master.points[outer])
        passing = ok | ~master.in_box
        for k, eps in enumerate(self.pol.radii):
            idx = master.indices_within(k)
            if np.all(passing[idx]):
                return ForcingVerdict(True, eps, self.samples_evaluated, self.depth_used)
        # unreachable: the innermost radius passes once the inner set does
        return ForcingVerdict(True, self.pol.radii[-1], self.samples_evaluated, self.depth_used)

    def _sub_forced(self, pts: np.ndarray, phi: Formula, providers, depth_left) -> np.ndarray:
        if isinstance(phi, (Eq, Rel)):
            return self.force_atom_many(pts, phi, providers)
        return np.array([self.force(p, phi, providers, depth_left).forced for p in pts])

    def _consume_depth(self, depth_left: int, what: str) -> int:
        if depth_left <= 0:
            raise DepthExhaustedError(
                f"neighborhood recursion depth exhausted at {what}; "
                f"raise the policy depth (currently {self.pol.depth})")
        self.depth_used = max(self.depth_used, self.pol.depth - depth_left + 1)
        return depth_left - 1

    # -- main recursion ------------------------------------------------------

    def force(self, center, phi: Formula, providers, depth_left: int) -> ForcingVerdict:
        center = np.asarray(center, dtype=float)
        if isinstance(phi, (Eq, Rel)):
            return self._force_atom(center, phi, providers)
        if isinstance(phi, And):
            lv = self.force(center, phi.left, providers, depth_left)
            if not lv.forced:
                return lv
            rv = self.force(center, phi.right, providers, depth_left)
            if not rv.forced:
                return rv
            eps = min(lv.witness_eps, rv.witness_eps)
            return ForcingVerdict(True, eps, self.samples_evaluated, self.depth_used)
        if isinstance(phi, Or):
            lv = self.force(center, phi.left, providers, depth_left)
            if lv.forced:
                return lv
            return self.force(center, phi.right, providers, depth_left)
        if isinstance(phi, Not):
            d = self._consume_depth(depth_left, "a negation")

            def not_ok(pts):
                return ~self._sub_forced(pts, phi.body, providers, d)

            return self._neighborhood_all(center, not_ok)
        if isinstance(phi, Implies):
            d = self._consume_depth(depth_left, "an implication")

            def implies_ok(pts):
                ante = self._sub_forced(pts, phi.left, providers, d)
                out = ~ante
                if np.any(ante):
                    out[ante] = self._sub_forced(pts[ante], phi.right, providers, d)
                return out

            return self._neighborhood_all(center, implies_ok)
        if isinstance(phi, Exists):
            if self.pol.exists_neighborhood:
                d = self._consume_depth(depth_left, "an existential (symmetric variant)")

                def exists_ok(pts):
                    out = np.zeros(len(pts), dtype=bool)
                    for w in self.family():
                        rest = ~out
                        if not np.any(rest):
                            break
                        out[rest] = self._sub_forced(pts[rest], phi.body,
                                                     providers + [w], d)
                    return out

                return self._neighborhood_all(center, exists_ok)
            for w in self.family():
                v = self.force(center, phi.body, providers + [w], depth_left)
                if v.forced:
                    return v
            return ForcingVerdict(False, None, self.samples_evaluated, self.depth_used)
        if isinstance(phi, Forall):
            d = self._consume_depth(depth_left, "a universal")

            def forall_ok(pts):
                out = np.ones(len(pts), dtype=bool)
                for w in self.family():
                    live = out.copy()
                    if not np.any(live):
                        break
                    out[live] = self._sub_forced(pts[live], phi.body,
                                                 providers + [w], d)
                return out

            return self._neighborhood_all(center, forall_ok)
        raise TypeError(f"not a Formula: {phi!r}")


def _formula_arg_count(phi: Formula, bound: int = 0) -> int:
    if isinstance(phi, Eq):
        return max(_term_arg_count(phi.left, bound), _term_arg_count(phi.right, bound))
    if isinstance(phi, Rel):
        return max((_term_arg_count(t, bound) for t in phi.args), default=0)
    if isinstance(phi, Not):
        return _formula_arg_count(phi.body, bound)
    if isinstance(phi, (And, Or, Implies)):
        return max(_formula_arg_count(phi.left, bound), _formula_arg_count(phi.right, bound))
    if isinstance(phi, (Exists, Forall)):
        return _formula_arg_count(phi.body, bound + 1)
    raise TypeError(f"not a Formula: {phi!r}")


def _term_arg_count(t: Term, bound: int) -> int:
    if isinstance(t, TermVar):
        return t.index + 1 - bound if t.index + 1 - bound > 0 else 0
    if isinstance(t, TermConst):
        return 0
    if isinstance(t, TermApp):
        return max((_term_arg_count(a, bound) for a in t.args), default=0)
    raise TypeError(f"not a Term: {t!r}")


def force(sb: StructureBundle, m, phi: Formula, sections: Sequence[Section],
          pol: NeighborhoodPolicy) -> ForcingVerdict:
    """Forcing of phi at the base point m for the given argument sections."""
    m = np.asarray(m, dtype=float)
    if not sb.base.contains(m):
        raise ForcingError(f"point {m.tolist()} outside the base box")
    needed = _formula_arg_count(phi)
    if needed > len(sections):
        raise ForcingError(f"formula needs {needed} argument section(s), got {len(sections)}")
    space = BundleSpace(sb)
    providers = [SectionProvider(s) for s in sections]
    engine = ForcingEngine(space, pol, providers)
    return engine.force(m, phi, providers, pol.depth)


# ---------------------------------------------------------------------------
# Derived checks


@dataclass(frozen=True)
class GridSelection:
    """A window lattice with a membership flag per point."""

    points: np.ndarray
    member: np.ndarray
    spacing: float

    def members(self) -> np.ndarray:
        return self.points[self.member]


def corner_lattice(box: BaseBox, spacing: float) -> np.ndarray:
    axes = []
    for lo, hi in zip(box.lows, box.highs):
        count = int(np.floor((hi - lo) / spacing + 1e-9)) + 1
        axes.append(lo + spacing * np.arange(count))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def spatial_extension(sb: StructureBundle, phi: Formula, sections, window: BaseBox,
                      spacing: float, pol: NeighborhoodPolicy) -> GridSelection:
    """Grid points of the window whose forcing verdict is Forced."""
    points = corner_lattice(window, spacing)
    space = BundleSpace(sb)
    providers = [SectionProvider(s) for s in sections]
    member = np.zeros(len(points), dtype=bool)
    for i, u in enumerate(points):
        if not sb.base.contains(u):
            continue
        engine = ForcingEngine(space, pol, providers)
        member[i] = engine.force(u, phi, providers, pol.depth).forced
    return GridSelection(points, member, spacing)


def density_check(sb: StructureBundle, phi: Formula, sections, m,
                  pol: NeighborhoodPolicy) -> bool:
    """Sampled density surrogate: some scheduled ball around m such that every
    sample's small sub-ball (radius eps / sqrt(N)) contains a forcing point."""
    m = np.asarray(m, dtype=float)
    space = BundleSpace(sb)
    providers = [SectionProvider(s) for s in sections]
    sampler = pol.sampler()
    master = sampler.master(m, space.lo, space.hi)
    sub_radius_factor = 1.0 / np.sqrt(pol.samples)

    def point_forces(u) -> bool:
        engine = ForcingEngine(space, pol, providers)
        return engine.force(u, phi, providers, pol.depth).forced

    for k, eps in enumerate(pol.radii):
        idx = master.indices_within(k)
        idx = idx[master.in_box[idx]]
        all_dense = True
        for u in master.points[idx]:
            candidates = sampler.sub_ball(u, eps * sub_radius_factor, space.lo, space.hi)
            if not any(point_forces(c) for c in candidates):
                all_dense = False
                break
        if all_dense:
            return True
    return False


def positive_stability_check(sb: StructureBundle, phi: Formula, sections, m,
                             pol: NeighborhoodPolicy) -> bool:
    """For positive =-free formulas: classical truth at the point implies the
    forcing verdict there (openness of relation guards makes truth stable)."""
    if not is_positive_eq_free(phi):
        raise NonPositiveFormulaError(
            "stability check applies to formulas built from relation atoms "
            "with conjunction, disjunction and existentials only")
    m = np.asarray(m, dtype=float)
    space = BundleSpace(sb)
    providers = [SectionProvider(s) for s in sections]
    engine = ForcingEngine(space, pol, providers)
    pt = m[None, :]
    assignment = [p.values(space, pt)[0] for p in providers]
    pool = [w.values(space, pt)[0] for w in engine.family()]
    fs = fiber_structure(sb, m)
    if not tarski_eval(phi, fs, assignment, pool, eq_tol=pol.tol_eq):
        return True
    return engine.force(m, phi, providers, pol.depth).forced
