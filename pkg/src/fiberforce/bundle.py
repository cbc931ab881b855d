"""Trivial fiber bundles of structures over base boxes.

Every bundle here is a global product (base box) x R^k; interpretations are
expression tables with free base variables, and pinning the base point yields
the classical structure on one fiber. Pullbacks precompose every
interpretation expression with the base map, so pulled-back bundles are again
plain StructureBundles.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .expr import Expr, Var, eval_expr, eval_dual_array, free_vars, substitute
from .logic import (FiberStructure, Signature, Term, TermApp, TermConst,
                    TermVar, fiber_arg_binding)


class BundleError(ValueError):
    pass


class OutOfDomainError(BundleError):
    pass


class ImageEscapeError(BundleError):
    pass


@dataclass(frozen=True)
class BaseBox:
    """Axis-aligned closed box; the desk-scale chart every object lives on."""

    lows: tuple
    highs: tuple

    def __post_init__(self):
        if len(self.lows) != len(self.highs) or not self.lows:
            raise BundleError("box needs matching non-empty bounds")
        for lo, hi in zip(self.lows, self.highs):
            if not lo < hi:
                raise BundleError(f"degenerate interval [{lo}, {hi}]")

    @property
    def dim(self) -> int:
        return len(self.lows)

    def contains(self, point, tol: float = 1e-9) -> bool:
        p = np.asarray(point, dtype=float)
        if p.shape != (self.dim,):
            return False
        return bool(np.all(p >= np.array(self.lows) - tol)
                    and np.all(p <= np.array(self.highs) + tol))

    def clip(self, points: np.ndarray) -> np.ndarray:
        return np.clip(points, np.array(self.lows), np.array(self.highs))

    def sample_grid(self, per_axis: int = 5) -> np.ndarray:
        """Small deterministic grid used for validation sweeps."""
        axes = [np.linspace(lo, hi, per_axis) for lo, hi in zip(self.lows, self.highs)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


def base_var_names(dim: int) -> tuple:
    return tuple(f"x{i + 1}" for i in range(dim))


def interpretation_var_names(base_dim: int, fiber_dim: int, arity: int) -> tuple:
    names = list(base_var_names(base_dim))
    for j in range(arity):
        for i in range(fiber_dim):
            names.append(f"y{j + 1}{i + 1}")
    if arity == 1:
        for i in range(fiber_dim):
            alias = f"y{i + 1}"
            if alias not in names:
                names.append(alias)
    return tuple(names)


@dataclass(frozen=True)
class FiberBundle:
    base: BaseBox
    fiber_dim: int

    def __post_init__(self):
        if self.fiber_dim < 1:
            raise BundleError("fiber dimension must be >= 1")


@dataclass(frozen=True)
class SmoothMap:
    """Map between boxes given componentwise by expressions over x1..xd of the
    source (paths are the 1-dimensional case; `t` is accepted as an alias for
    x1 when parsing model files)."""

    source_dim: int
    target_dim: int
    components: tuple  # target_dim expressions over source variables

    def __post_init__(self):
        if len(self.components) != self.target_dim:
            raise BundleError("component count must equal target dimension")

    def __call__(self, point) -> np.ndarray:
        b = {f"x{i + 1}": float(point[i]) for i in range(self.source_dim)}
        return np.array([eval_expr(c, b) for c in self.components], dtype=float)

    def values(self, points: np.ndarray) -> np.ndarray:
        """Evaluate over an (M, source_dim) array -> (M, target_dim)."""
        pts = np.asarray(points, dtype=float)
        env = {f"x{i + 1}": pts[:, i] for i in range(self.source_dim)}
        cols = [eval_dual_array(c, env, {})[0] for c in self.components]
        return np.stack([np.broadcast_to(c, (len(pts),)) for c in cols], axis=-1)

    def jacobian_apply(self, points: np.ndarray, velocities: np.ndarray) -> np.ndarray:
        """Pushforward J_h(p) @ v over (M, d) points and velocities, computed
        by one forward-mode pass per component (exact, no finite differences)."""
        pts = np.asarray(points, dtype=float)
        vel = np.asarray(velocities, dtype=float)
        env = {f"x{i + 1}": pts[:, i] for i in range(self.source_dim)}
        dots = {f"x{i + 1}": vel[:, i] for i in range(self.source_dim)}
        out = []
        for c in self.components:
            _, d = eval_dual_array(c, env, dots)
            out.append(np.broadcast_to(d, (len(pts),)))
        return np.stack(out, axis=-1)


@dataclass(frozen=True)
class Section:
    """Local section over a sub-box: fiber components as expressions of the
    base variables (the projection is the identity by trivialization)."""

    domain: BaseBox
    components: tuple

    @property
    def fiber_dim(self) -> int:
        return len(self.components)


@dataclass(frozen=True)
class StructureBundle:
    bundle: FiberBundle
    signature: Signature
    guards: Mapping[str, Expr]
    funcs: Mapping[str, tuple]
    consts: Mapping[str, tuple]

    def __post_init__(self):
        base_dim = self.bundle.base.dim
        k = self.bundle.fiber_dim
        for name, arity in self.signature.relations:
            if name not in self.guards:
                raise BundleError(f"missing guard for relation '{name}'")
            allowed = set(interpretation_var_names(base_dim, k, arity))
            extra = free_vars(self.guards[name]) - allowed
            if extra:
                raise BundleError(f"guard of '{name}' uses undeclared variables {sorted(extra)}")
        for name, arity in self.signature.functions:
            comps = self.funcs.get(name)
            if comps is None or len(comps) != k:
                raise BundleError(f"function '{name}' needs {k} component expressions")
            allowed = set(interpretation_var_names(base_dim, k, arity))
            for c in comps:
                extra = free_vars(c) - allowed
                if extra:
                    raise BundleError(f"function '{name}' uses undeclared variables {sorted(extra)}")
        for name in self.signature.constants:
            comps = self.consts.get(name)
            if comps is None or len(comps) != k:
                raise BundleError(f"constant '{name}' needs {k} component expressions")
            allowed = set(base_var_names(base_dim))
            for c in comps:
                extra = free_vars(c) - allowed
                if extra:
                    raise BundleError(f"constant '{name}' uses undeclared variables {sorted(extra)}")
        # constants must be total sections: smoke-evaluate on a small grid
        for name in self.signature.constants:
            for m in self.bundle.base.sample_grid(3):
                b = {f"x{i + 1}": float(m[i]) for i in range(base_dim)}
                for c in self.consts[name]:
                    eval_expr(c, b)

    @property
    def base(self) -> BaseBox:
        return self.bundle.base

    @property
    def fiber_dim(self) -> int:
        return self.bundle.fiber_dim


# ---------------------------------------------------------------------------
# Operations


def fiber_structure(sb: StructureBundle, m) -> FiberStructure:
    """Pin the base point: the structure the fiber over m carries."""
    m = np.asarray(m, dtype=float)
    if not sb.base.contains(m):
        raise OutOfDomainError(f"base point {m.tolist()} outside the base box")
    return FiberStructure(
        base_dim=sb.base.dim,
        fiber_dim=sb.fiber_dim,
        signature=sb.signature,
        guards=dict(sb.guards),
        funcs=dict(sb.funcs),
        consts=dict(sb.consts),
        base_point=tuple(float(v) for v in m),
    )


def direct_sum(sb: StructureBundle, k: int) -> FiberBundle:
    """The bundle over the same base whose fiber at m is (fiber at m)^k."""
    if k < 1:
        raise BundleError("direct sum count must be >= 1")
    return FiberBundle(sb.base, k * sb.fiber_dim)


def pack_fiber_tuple(points) -> np.ndarray:
    """Lay out a tuple of fiber points as one direct-sum fiber vector."""
    return np.concatenate([np.asarray(p, dtype=float).ravel() for p in points])


def unpack_fiber_tuple(vector, k: int, fiber_dim: int) -> list:
    v = np.asarray(vector, dtype=float)
    if v.shape != (k * fiber_dim,):
        raise BundleError(f"expected a vector of length {k * fiber_dim}")
    return [v[j * fiber_dim:(j + 1) * fiber_dim].copy() for j in range(k)]


def compose_map(outer: SmoothMap, inner: SmoothMap) -> SmoothMap:
    """outer ∘ inner by substitution of component expressions."""
    if inner.target_dim != outer.source_dim:
        raise BundleError("map dimensions do not compose")
    mapping = {f"x{i + 1}": inner.components[i] for i in range(inner.target_dim)}
    comps = tuple(substitute(c, mapping) for c in outer.components)
    return SmoothMap(inner.source_dim, outer.target_dim, comps)


def _check_image(h: SmoothMap, source_box: BaseBox, target_box: BaseBox):
    pts = source_box.sample_grid(5)
    images = h.values(pts)
    lo = np.array(target_box.lows) - 1e-9
    hi = np.array(target_box.highs) + 1e-9
    bad = np.any((images < lo) | (images > hi), axis=1)
    if np.any(bad):
        n = pts[np.argmax(bad)]
        raise ImageEscapeError(
            f"map sends sampled source point {n.tolist()} to "
            f"{h(n).tolist()}, outside the base box")


def pullback_bundle(sb: StructureBundle, h: SmoothMap, source_box: BaseBox) -> StructureBundle:
    """Pull the bundle of structures back along h by precomposing every
    interpretation expression's base variables with h's components."""
    if h.target_dim != sb.base.dim:
        raise BundleError("map target dimension must match the base dimension")
    if h.source_dim != source_box.dim:
        raise BundleError("source box dimension must match the map source")
    _check_image(h, source_box, sb.base)
    mapping = {f"x{i + 1}": h.components[i] for i in range(sb.base.dim)}
    guards = {name: substitute(g, mapping) for name, g in sb.guards.items()}
    funcs = {name: tuple(substitute(c, mapping) for c in comps)
             for name, comps in sb.funcs.items()}
    consts = {name: tuple(substitute(c, mapping) for c in comps)
              for name, comps in sb.consts.items()}
    return StructureBundle(FiberBundle(source_box, sb.fiber_dim), sb.signature,
                           guards, funcs, consts)


def pullback_section(s: Section, h: SmoothMap, source_box: BaseBox) -> Section:
    """The induced section of the pulled-back bundle: components precomposed
    with h."""
    if h.source_dim != source_box.dim:
        raise BundleError("source box dimension must match the map source")
    mapping = {f"x{i + 1}": h.components[i] for i in range(h.target_dim)}
    return Section(source_box, tuple(substitute(c, mapping) for c in s.components))


def eval_section(s: Section, m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if not s.domain.contains(m):
        raise OutOfDomainError(f"point {m.tolist()} outside the section's domain")
    b = {f"x{i + 1}": float(m[i]) for i in range(s.domain.dim)}
    return np.array([eval_expr(c, b) for c in s.components], dtype=float)


def term_section(t: Term, sections, sb: StructureBundle) -> Section:
    """The section m -> t interpreted at m over the given argument sections,
    built by expression substitution so it is itself a Section."""
    if not sections:
        raise BundleError("term_section needs at least one argument section")
    domain = sections[0].domain
    for s in sections:
        if s.domain != domain:
            raise BundleError("argument sections must share one domain box")
        if s.fiber_dim != sb.fiber_dim:
            raise BundleError("argument sections must match the fiber dimension")
    k = sb.fiber_dim

    def build(term: Term) -> tuple:
        if isinstance(term, TermVar):
            if term.index >= len(sections):
                raise BundleError(f"term variable index {term.index} not covered")
            return tuple(sections[term.index].components)
        if isinstance(term, TermConst):
            return tuple(sb.consts[term.name])
        if isinstance(term, TermApp):
            arg_components = [build(a) for a in term.args]
            arity = sb.signature.function_arity(term.name)
            mapping = {}
            for j in range(arity):
                for i in range(k):
                    mapping[f"y{j + 1}{i + 1}"] = arg_components[j][i]
            if arity == 1:
                for i in range(k):
                    mapping.setdefault(f"y{i + 1}", arg_components[0][i])
            return tuple(substitute(c, mapping) for c in sb.funcs[term.name])
        raise TypeError(f"not a Term: {term!r}")

    return Section(domain, build(t))


def constant_section(domain: BaseBox, value) -> Section:
    from .expr import Num

    value = np.asarray(value, dtype=float).ravel()
    return Section(domain, tuple(Num(float(v)) for v in value))


def identity_map(dim: int) -> SmoothMap:
    return SmoothMap(dim, dim, tuple(Var(f"x{i + 1}") for i in range(dim)))
