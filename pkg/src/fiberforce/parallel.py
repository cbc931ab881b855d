"""Parallel semantics: forcing along transported measurements.

A formula is parallel forced at a tuple of fiber points when, along every
path of a finite seeded family through the base point, forcing holds at
parameter 0 over the path's pullback with the horizontally transported tuple
as argument sections. The finite family is a refutation-sound surrogate for
the definition's universal over all paths: enlarging it can only flip Forced
to NotForced.

Horizontal extensions walk the base grid keeping the forcing condition along
the concatenated connecting path true at every integration checkpoint (the
transported tuple plays the argument sections); vertical extensions walk the
fiber-tuple grid at a fixed base point, re-checking the full parallel
verdict at every checkpoint. Both are breadth-first searches over seed-
anchored lattices with deterministic frontier order.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from itertools import product

import numpy as np

from .bundle import BaseBox, SmoothMap, StructureBundle
from .forcing import (ForcingEngine, InterpTables, LiftProvider, NeighborhoodPolicy,
                      PathSpace, _formula_arg_count)
from .logic import Formula, neighborhood_depth
from .transport import BaseEscapeError, Connection, _segment_rhs, integrate_lift


class ParallelError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Path families


@dataclass(frozen=True)
class PathFamily:
    """Cubic-coefficient paths through a common center, parameterized over
    [-1, 1] with sigma(0) = center; reproducible from the seed."""

    center: tuple
    coeffs: np.ndarray   # (P, n, 4); column d holds the t^d coefficient, d0 = 0
    labels: tuple
    seed: int
    box: BaseBox

    @property
    def count(self) -> int:
        return len(self.coeffs)

    def data(self, ts: np.ndarray) -> tuple:
        """Positions and velocities (S, P, n) at the given parameters."""
        ts = np.asarray(ts, dtype=float)
        powers = np.stack([np.ones_like(ts), ts, ts ** 2, ts ** 3], axis=-1)
        dpowers = np.stack([np.zeros_like(ts), np.ones_like(ts), 2 * ts, 3 * ts ** 2],
                           axis=-1)
        center = np.asarray(self.center, dtype=float)
        pos = center[None, None, :] + np.einsum("pnd,sd->spn", self.coeffs, powers)
        vel = np.einsum("pnd,sd->spn", self.coeffs, dpowers)
        return pos, vel

    def positions(self, index: int, ts: np.ndarray) -> np.ndarray:
        pos, _ = self.data(ts)
        return pos[:, index, :]

    def describe(self, index: int) -> dict:
        return {"label": self.labels[index],
                "coefficients": self.coeffs[index].tolist()}


@dataclass(frozen=True)
class MappedFamily:
    """A family pushed through a smooth map (the composed paths of the
    pullback-compatibility identity)."""

    inner: PathFamily
    through: SmoothMap

    @property
    def count(self) -> int:
        return self.inner.count

    @property
    def labels(self) -> tuple:
        return tuple(f"{name} (mapped)" for name in self.inner.labels)

    def data(self, ts: np.ndarray) -> tuple:
        pos, vel = self.inner.data(ts)
        S, P, d = pos.shape
        flat_p = pos.reshape(S * P, d)
        flat_v = vel.reshape(S * P, d)
        out_p = self.through.values(flat_p).reshape(S, P, self.through.target_dim)
        out_v = self.through.jacobian_apply(flat_p, flat_v).reshape(S, P,
                                                                    self.through.target_dim)
        return out_p, out_v

    def describe(self, index: int) -> dict:
        info = self.inner.describe(index)
        info["label"] = f"{info['label']} (mapped)"
        return info


def _fits_box(center, coeffs_row, box: BaseBox, scale: float) -> bool:
    ts = np.linspace(-1.0, 1.0, 81)
    powers = np.stack([np.zeros_like(ts), scale * ts, (scale * ts) ** 2,
                       (scale * ts) ** 3], axis=-1)
    pos = np.asarray(center) + powers @ coeffs_row.T
    return bool(np.all(pos >= np.array(box.lows) - 1e-12)
                and np.all(pos <= np.array(box.highs) + 1e-12))


def build_path_family(center, box: BaseBox, seed: int, arcs: int = 8,
                      cubics: int = 16) -> PathFamily:
    """Default family: one segment per axis orientation, a fixed fan of
    quadratic arcs, and seeded random cubics. Paths escaping the box are
    shrunk by reparameterization (t -> rho * t, rho halved up to 2^-6) and
    dropped if they still escape."""
    center = np.asarray(center, dtype=float)
    n = len(center)
    rows = []
    labels = []
    for i in range(n):
        for sign in (1.0, -1.0):
            row = np.zeros((n, 4))
            row[i, 1] = sign
            rows.append(row)
            labels.append(f"axis{i + 1}{'+' if sign > 0 else '-'}")
    for j in range(arcs):
        ang = 2.0 * np.pi * j / max(arcs, 1)
        row = np.zeros((n, 4))
        c1 = np.cos(ang)
        if abs(c1) < 0.3:
            c1 = np.copysign(0.3, c1 if c1 != 0 else 1.0)
        row[0, 1] = c1
        if n >= 2:
            row[1, 1] = np.sin(ang)
            row[0, 2] = -0.4 * np.sin(ang)
            row[1, 2] = 0.4 * np.cos(ang)
        else:
            row[0, 2] = 0.4 * np.sin(ang) if abs(np.sin(ang)) > 0.1 else 0.4
        rows.append(row)
        labels.append(f"arc{j + 1}")
    rng = np.random.default_rng(seed)
    for j in range(cubics):
        row = np.zeros((n, 4))
        row[:, 1] = rng.uniform(-1.0, 1.0, size=n)
        row[:, 2] = rng.uniform(-0.5, 0.5, size=n)
        row[:, 3] = rng.uniform(-0.5, 0.5, size=n)
        rows.append(row)
        labels.append(f"cubic{j + 1}")
    kept_rows = []
    kept_labels = []
    for row, label in zip(rows, labels):
        for scale in (1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625):
            if _fits_box(center, row, box, scale):
                scaled = row * np.array([1.0, scale, scale ** 2, scale ** 3])
                kept_rows.append(scaled)
                kept_labels.append(label if scale == 1.0 else f"{label}@{scale:g}")
                break
    if not kept_rows:
        raise ParallelError("no family path fits inside the base box")
    return PathFamily(tuple(center.tolist()), np.array(kept_rows), tuple(kept_labels),
                      seed, box)


# ---------------------------------------------------------------------------
# Parallel forcing


def sampling_horizon(phi: Formula, pol: NeighborhoodPolicy) -> float:
    """How far along a path the sampled semantics can look: each neighborhood
    clause can push samples one schedule radius further out."""
    return min(1.0, pol.eps0 * (neighborhood_depth(phi, pol.exists_neighborhood) + 1))


@dataclass(frozen=True)
class ParallelVerdict:
    forced: bool
    counterexample: dict | None
    paths_checked: int

    @property
    def decision(self) -> str:
        return "Forced" if self.forced else "NotForced"


def _span_half_grid(T: float, h: float) -> tuple:
    n = max(1, int(round(T / h)))
    hh = T / n
    return n, hh, 0.5 * hh * np.arange(2 * n + 1)


def _transport_selected(conn: Connection, pos_f, vel_f, pos_b, vel_b,
                        tuples: np.ndarray, paths, n_steps: int, hh: float):
    """Lift the tuples along the selected paths over both half-spans.

    pos/vel: (S, P, n) family data for the forward (f) and backward (b) half
    grids. Batch rows sharing a (path, initial value) pair are integrated
    once and fanned back out. Returns (params (L,), positions (L, |paths|, n),
    lifts (L, C, |paths|, nargs, k))."""
    C, nargs, k = tuples.shape
    paths = np.asarray(paths, dtype=int)
    Pn = len(paths)
    cols_full = np.tile(np.repeat(np.arange(Pn), nargs), C)
    y0_full = np.broadcast_to(tuples[:, None, :, :], (C, Pn, nargs, k)).reshape(-1, k)
    key = np.concatenate((cols_full[:, None].astype(float), y0_full), axis=1)
    uniq, inverse = np.unique(key, axis=0, return_inverse=True)
    cols_u = uniq[:, 0].astype(int)
    y0_u = uniq[:, 1:]
    out = {}
    for sign, pos, vel in ((1.0, pos_f, vel_f), (-1.0, pos_b, vel_b)):
        sel_pos = np.ascontiguousarray(pos[:, paths, :])
        sel_vel = sign * vel[:, paths, :]
        rhs = conn.path_rhs(sel_pos, sel_vel, cols_u)
        states = integrate_lift(rhs, y0_u, n_steps, sign * hh)
        expanded = states[:, inverse, :].reshape(n_steps + 1, C, Pn, nargs, k)
        out[sign] = (sel_pos[::2], expanded)
    pos_fk, lift_fk = out[1.0]
    pos_bk, lift_bk = out[-1.0]
    ts = 0.5 * hh * np.arange(2 * n_steps + 1)[::2]
    params = np.concatenate((-ts[::-1][:-1], ts))
    positions = np.concatenate((pos_bk[::-1][:-1], pos_fk), axis=0)
    lifts = np.concatenate((lift_bk[::-1][:-1], lift_fk), axis=0)
    return params, positions, lifts


def _plain_var_atom(phi: Formula) -> bool:
    from .logic import Eq, Rel, TermVar

    if isinstance(phi, Eq):
        return isinstance(phi.left, TermVar) and isinstance(phi.right, TermVar)
    if isinstance(phi, Rel):
        return all(isinstance(a, TermVar) for a in phi.args)
    return False


def _atomic_verdicts_at_zero(interp: InterpTables, params, positions, lifts,
                             phi: Formula, pol: NeighborhoodPolicy, T: float):
    """Vectorized ball-forcing at parameter 0 for an atom over plain
    variables, across all (tuple, path) pairs at once. The ball center is the
    same parameter for every pair, so one sample set serves all of them."""
    from .logic import Eq

    L, C, Pn, nargs, k = lifts.shape
    sampler = pol.sampler()
    master = sampler.master(np.array([0.0]), np.array([-T]), np.array([T]))
    ts = master.points[master.in_box][:, 0]
    S = len(ts)
    idx = np.clip(np.searchsorted(params, np.clip(ts, params[0], params[-1]),
                                  side="right") - 1, 0, len(params) - 2)
    w = (np.clip(ts, params[0], params[-1]) - params[idx]) / (params[idx + 1] - params[idx])
    if isinstance(phi, Eq):
        diff = lifts[:, :, :, phi.left.index, :] - lifts[:, :, :, phi.right.index, :]
        diff_s = diff[idx] * (1 - w)[:, None, None, None] \
            + diff[idx + 1] * w[:, None, None, None]             # (S, C, P, k)
        ok = np.max(np.abs(diff_s), axis=-1) <= pol.tol_eq       # (S, C, P)
    else:
        lift_s = lifts[idx] * (1 - w)[:, None, None, None, None] \
            + lifts[idx + 1] * w[:, None, None, None, None]      # (S, C, P, nargs, k)
        pos_s = positions[idx] * (1 - w)[:, None, None] \
            + positions[idx + 1] * w[:, None, None]              # (S, P, n)
        arity = len(phi.args)
        base = np.broadcast_to(pos_s[:, None, :, :], (S, C, Pn, pos_s.shape[-1]))
        args = np.stack([lift_s[:, :, :, t.index, :] for t in phi.args], axis=3)
        flat_base = base.reshape(S * C * Pn, -1)
        flat_args = args.reshape(S * C * Pn, arity, k)
        vals = interp.guard(phi.name, flat_base, flat_args).reshape(S, C, Pn)
        ok = vals > 0.0
    ok = np.moveaxis(ok, 0, -1)                                   # (C, P, S)
    in_box_rows = np.flatnonzero(master.in_box)
    forced = np.zeros(ok.shape[:2], dtype=bool)
    N = pol.samples
    for kk in range(pol.halvings + 1):
        keep = (in_box_rows == 0) | (in_box_rows >= 1 + kk * N)
        forced |= np.all(ok[:, :, keep], axis=-1)
    return forced


def _parallel_forced_tuples(sb: StructureBundle, conn: Connection, m,
                            tuples: np.ndarray, phi: Formula, fam,
                            pol: NeighborhoodPolicy,
                            want_counterexample: bool = False):
    """Batched parallel verdicts for several measurement tuples at one base
    point. The first family path is transported and checked alone first (a
    cheap refuter); surviving tuples then share one batched transport of the
    remaining paths."""
    m = np.asarray(m, dtype=float)
    tuples = np.asarray(tuples, dtype=float)
    C, nargs, k = tuples.shape
    if k != sb.fiber_dim:
        raise ParallelError("tuple components must match the fiber dimension")
    T = sampling_horizon(phi, pol)
    n_steps, hh, ts_half = _span_half_grid(T, pol.step)
    pos_f, vel_f = fam.data(ts_half)
    pos_b, vel_b = fam.data(-ts_half)
    lo = np.array(conn.base_box.lows) - 1e-9
    hi = np.array(conn.base_box.highs) + 1e-9
    for pos in (pos_f, pos_b):
        if np.any(pos < lo) or np.any(pos > hi):
            raise BaseEscapeError("a family path leaves the base box")
    interp = InterpTables(sb)
    fast_atom = _plain_var_atom(phi)
    P = pos_f.shape[1]
    verdicts = np.ones(C, dtype=bool)
    refuter = np.full(C, -1, dtype=int)

    def eval_paths(path_indices, tuple_rows):
        sub = tuples[tuple_rows]
        params, positions, lifts = _transport_selected(
            conn, pos_f, vel_f, pos_b, vel_b, sub, path_indices, n_steps, hh)
        if fast_atom:
            forced = _atomic_verdicts_at_zero(interp, params, positions, lifts,
                                              phi, pol, T)
            for ci, row in enumerate(tuple_rows):
                bad = np.flatnonzero(~forced[ci])
                if len(bad):
                    verdicts[row] = False
                    refuter[row] = path_indices[int(bad[0])]
            return
        for ci, row in enumerate(tuple_rows):
            for pi, p in enumerate(path_indices):
                space = PathSpace(interp, params, positions[:, pi, :], -T, T)
                providers = [LiftProvider(params, lifts[:, ci, pi, j, :])
                             for j in range(nargs)]
                engine = ForcingEngine(space, pol, providers)
                if not engine.force(np.array([0.0]), phi, providers, pol.depth).forced:
                    verdicts[row] = False
                    refuter[row] = p
                    break

    eval_paths([0], np.arange(C))
    alive = np.flatnonzero(verdicts)
    if P > 1 and len(alive):
        eval_paths(list(range(1, P)), alive)
    counterexample = None
    if want_counterexample:
        bad = np.flatnonzero(~verdicts)
        if len(bad):
            p = int(refuter[bad[0]])
            counterexample = dict(fam.describe(p), index=p)
    return verdicts, counterexample


def parallel_forced(sb: StructureBundle, conn: Connection, m, e_tuple, phi: Formula,
                    fam, pol: NeighborhoodPolicy) -> ParallelVerdict:
    """Forced iff forcing holds at parameter 0 along every family path with
    the transported tuple as argument sections; the refuting path is returned
    otherwise."""
    e_tuple = np.asarray(e_tuple, dtype=float)
    if e_tuple.ndim == 1:
        e_tuple = e_tuple[None, :]
    needed = _formula_arg_count(phi)
    if needed > len(e_tuple):
        raise ParallelError(f"formula needs {needed} measurement(s), got {len(e_tuple)}")
    flags, counterexample = _parallel_forced_tuples(
        sb, conn, m, e_tuple[None, :, :], phi, fam, pol, want_counterexample=True)
    return ParallelVerdict(bool(flags[0]), counterexample, fam.count)


def check_pullback_compatibility(sb: StructureBundle, conn: Connection, f: SmoothMap,
                                 source_box: BaseBox, m, e_tuple, phi: Formula,
                                 fam: PathFamily, preimages, pol: NeighborhoodPolicy):
    """Both evaluation routes of the compatibility identity: the direct side
    transports along the mapped family, the pulled-back side builds the
    pullback bundle and connection symbolically and transports along the
    source family. Returns (all_equal, per-preimage details)."""
    from .bundle import pullback_bundle
    from .transport import pullback_connection

    m = np.asarray(m, dtype=float)
    left = parallel_forced(sb, conn, m, e_tuple, phi, MappedFamily(fam, f), pol)
    pb_sb = pullback_bundle(sb, f, source_box)
    pb_conn = pullback_connection(conn, f, source_box)
    details = []
    ok = True
    for n in preimages:
        n = np.asarray(n, dtype=float)
        if np.max(np.abs(f(n) - m)) > 1e-9:
            raise ParallelError(f"{n.tolist()} is not a preimage of {m.tolist()}")
        right = parallel_forced(pb_sb, pb_conn, n, e_tuple, phi, fam, pol)
        agree = right.forced == left.forced
        ok = ok and agree
        details.append({"preimage": n.tolist(), "direct": left.decision,
                        "pulled_back": right.decision, "agree": agree})
    return ok, details


# ---------------------------------------------------------------------------
# Extensions


@dataclass(frozen=True)
class ExtensionSet:
    """Seed-anchored window lattice with membership flags and, per member,
    the concrete chain of lattice points along which every checkpoint was
    verified."""

    kind: str               # "horizontal" | "vertical"
    points: np.ndarray      # (M, d) lattice points
    member: np.ndarray      # (M,) bool
    spacing: float
    seed_index: int
    provenance: dict        # member row -> tuple of row indices from the seed

    def members(self) -> np.ndarray:
        return self.points[self.member]


def _anchored_axes(anchor: np.ndarray, lows, highs, spacing: float):
    axes = []
    for a, lo, hi in zip(anchor, lows, highs):
        j_min = int(np.ceil((lo - a) / spacing - 1e-9))
        j_max = int(np.floor((hi - a) / spacing + 1e-9))
        axes.append((j_min, j_max))
    return axes


def _moore_moves(dim: int):
    return [mv for mv in product((-1, 0, 1), repeat=dim) if any(mv)]


class _LatticeWindow:
    def __init__(self, anchor, lows, highs, spacing: float):
        self.anchor = np.asarray(anchor, dtype=float)
        self.spacing = float(spacing)
        self.axes = _anchored_axes(self.anchor, lows, highs, spacing)
        ranges = [range(j0, j1 + 1) for j0, j1 in self.axes]
        self.index_list = list(product(*ranges))
        self.row_of = {idx: row for row, idx in enumerate(self.index_list)}

    def contains(self, idx) -> bool:
        return all(j0 <= j <= j1 for j, (j0, j1) in zip(idx, self.axes))

    def point(self, idx) -> np.ndarray:
        return self.anchor + self.spacing * np.array(idx, dtype=float)

    def points(self) -> np.ndarray:
        return np.array([self.point(idx) for idx in self.index_list])


def horizontal_extension(sb: StructureBundle, conn: Connection, m, e_tuple,
                         phi: Formula, window: BaseBox, spacing: float,
                         pol: NeighborhoodPolicy) -> ExtensionSet:
    """Base grid points reachable from m by grid-segment paths along which the
    transported tuple keeps forcing the formula at every integration
    checkpoint. The walked path is the path of the definition; concatenation
    realizes it."""
    m = np.asarray(m, dtype=float)
    e_tuple = np.asarray(e_tuple, dtype=float)
    if e_tuple.ndim == 1:
        e_tuple = e_tuple[None, :]
    nargs, k = e_tuple.shape
    lows = np.maximum(np.array(window.lows), np.array(sb.base.lows))
    highs = np.minimum(np.array(window.highs), np.array(sb.base.highs))
    lattice = _LatticeWindow(m, lows, highs, spacing)
    interp = InterpTables(sb)
    seed_idx = tuple(0 for _ in range(sb.base.dim))
    if not lattice.contains(seed_idx):
        raise ParallelError("the seed point must lie inside the window")

    def checkpoints_pass(params, positions, lifts, new_from: int) -> bool:
        space = PathSpace(interp, params, positions, 0.0, float(params[-1]))
        providers = [LiftProvider(params, lifts[:, j, :]) for j in range(nargs)]
        for t_c in params[new_from:]:
            engine = ForcingEngine(space, pol, providers)
            if not engine.force(np.array([t_c]), phi, providers, pol.depth).forced:
                return False
        return True

    member = np.zeros(len(lattice.index_list), dtype=bool)
    provenance: dict = {}
    seed_params = np.array([0.0])
    seed_positions = m[None, :]
    seed_lifts = e_tuple[None, :, :]
    if not checkpoints_pass(seed_params, seed_positions, seed_lifts, 0):
        return ExtensionSet("horizontal", lattice.points(), member, spacing,
                            lattice.row_of[seed_idx], provenance)
    accepted = {seed_idx: (seed_params, seed_positions, seed_lifts, (seed_idx,))}
    member[lattice.row_of[seed_idx]] = True
    provenance[lattice.row_of[seed_idx]] = (lattice.row_of[seed_idx],)
    frontier = deque([seed_idx])
    moves = _moore_moves(sb.base.dim)
    while frontier:
        cur = frontier.popleft()
        params, positions, lifts, chain = accepted[cur]
        p = lattice.point(cur)
        for mv in moves:
            nxt = tuple(a + b for a, b in zip(cur, mv))
            # a rejection from one parent does not settle the node: another
            # reaching path may keep the condition true
            if not lattice.contains(nxt) or nxt in accepted:
                continue
            q = lattice.point(nxt)
            seg_len = float(np.linalg.norm(q - p))
            steps = max(1, int(round(seg_len / pol.step)))
            rhs = _segment_rhs(conn, p, q, steps)
            seg_lifts = integrate_lift(rhs, lifts[-1].reshape(nargs, k), steps,
                                       1.0 / steps)
            ts = params[-1] + seg_len * np.arange(1, steps + 1) / steps
            frac = np.arange(1, steps + 1)[:, None] / steps
            seg_pos = p[None, :] + frac * (q - p)[None, :]
            cand_params = np.concatenate((params, ts))
            cand_positions = np.concatenate((positions, seg_pos), axis=0)
            cand_lifts = np.concatenate((lifts, seg_lifts[1:]), axis=0)
            if checkpoints_pass(cand_params, cand_positions, cand_lifts, len(params)):
                accepted[nxt] = (cand_params, cand_positions, cand_lifts, chain + (nxt,))
                row = lattice.row_of[nxt]
                member[row] = True
                provenance[row] = tuple(lattice.row_of[i] for i in chain + (nxt,))
                frontier.append(nxt)
    return ExtensionSet("horizontal", lattice.points(), member, spacing,
                        lattice.row_of[seed_idx], provenance)


def vertical_extension(sb: StructureBundle, conn: Connection, m, e_tuple,
                       phi: Formula, fiber_window: BaseBox, spacing: float,
                       pol: NeighborhoodPolicy, fam: PathFamily | None = None) -> ExtensionSet:
    """Fiber-tuple grid points reachable from the seed tuple by straight
    segments whose every checkpoint tuple is parallel forced at m (full path
    family; the base point never moves)."""
    m = np.asarray(m, dtype=float)
    e_tuple = np.asarray(e_tuple, dtype=float)
    if e_tuple.ndim == 1:
        e_tuple = e_tuple[None, :]
    nargs, k = e_tuple.shape
    if fiber_window.dim != k:
        raise ParallelError("the fiber window must have the fiber dimension")
    if fam is None:
        fam = build_path_family(m, sb.base, pol.seed)
    packed = e_tuple.reshape(-1)
    lows = np.tile(np.array(fiber_window.lows), nargs)
    highs = np.tile(np.array(fiber_window.highs), nargs)
    if np.any(packed < lows - 1e-9) or np.any(packed > highs + 1e-9):
        raise ParallelError("the seed tuple must lie inside the fiber window")
    lattice = _LatticeWindow(packed, lows, highs, spacing)

    def tuples_forced(tuples: np.ndarray) -> np.ndarray:
        flags, _ = _parallel_forced_tuples(sb, conn, m, tuples, phi, fam, pol)
        return flags

    seed_idx = tuple(0 for _ in range(nargs * k))
    member = np.zeros(len(lattice.index_list), dtype=bool)
    provenance: dict = {}
    if not bool(tuples_forced(packed.reshape(1, nargs, k))[0]):
        return ExtensionSet("vertical", lattice.points(), member, spacing,
                            lattice.row_of[seed_idx], provenance)
    member[lattice.row_of[seed_idx]] = True
    provenance[lattice.row_of[seed_idx]] = (lattice.row_of[seed_idx],)
    accepted = {seed_idx}
    chains = {seed_idx: (seed_idx,)}
    frontier = deque([seed_idx])
    moves = _moore_moves(nargs * k)
    while frontier:
        cur = frontier.popleft()
        p = lattice.point(cur)
        candidates = []
        for mv in moves:
            nxt = tuple(a + b for a, b in zip(cur, mv))
            if lattice.contains(nxt) and nxt not in accepted:
                candidates.append(nxt)
        if not candidates:
            continue
        # screen all candidate segments by their first checkpoint in one call
        firsts = []
        for nxt in candidates:
            q = lattice.point(nxt)
            steps = max(1, int(round(float(np.linalg.norm(q - p)) / pol.step)))
            firsts.append((p + (q - p) / steps).reshape(nargs, k))
        screened = tuples_forced(np.stack(firsts))
        for nxt, passed in zip(candidates, screened):
            if not passed or nxt in accepted:
                continue
            q = lattice.point(nxt)
            seg_len = float(np.linalg.norm(q - p))
            steps = max(1, int(round(seg_len / pol.step)))
            frac = np.arange(2, steps + 1)[:, None] / steps
            rest = (p[None, :] + frac * (q - p)[None, :]).reshape(-1, nargs, k)
            if len(rest) and not bool(np.all(tuples_forced(rest))):
                continue
            accepted.add(nxt)
            row = lattice.row_of[nxt]
            member[row] = True
            chains[nxt] = chains[cur] + (nxt,)
            provenance[row] = tuple(lattice.row_of[i] for i in chains[nxt])
            frontier.append(nxt)
    return ExtensionSet("vertical", lattice.points(), member, spacing,
                        lattice.row_of[seed_idx], provenance)


def equality_extension_check(sb: StructureBundle, conn: Connection, m, e_value,
                             base_window: BaseBox, fiber_window: BaseBox,
                             base_spacing: float, fiber_spacing: float,
                             pol: NeighborhoodPolicy,
                             fam: PathFamily | None = None) -> tuple:
    """For the two-variable equality formula at a doubled measurement (e, e):
    the vertical extension must be exactly the diagonal of the fiber window's
    lattice and the horizontal extension must cover the whole base window
    lattice (uniqueness of the lift keeps equal starts equal). Returns
    (ok, diagnostics)."""
    from .logic import Eq, TermVar

    e_value = np.asarray(e_value, dtype=float).reshape(-1)
    k = sb.fiber_dim
    if len(e_value) != k:
        raise ParallelError("the seed measurement must be one fiber point")
    phi = Eq(TermVar(0, "x1"), TermVar(1, "x2"))
    e_tuple = np.stack([e_value, e_value])
    diag: dict = {}
    flo = np.array(fiber_window.lows)
    fhi = np.array(fiber_window.highs)
    if np.any(e_value < flo - 1e-9) or np.any(e_value > fhi + 1e-9):
        return False, {"error": "seed measurement outside the fiber window"}
    vert = vertical_extension(sb, conn, m, e_tuple, phi, fiber_window,
                              fiber_spacing, pol, fam=fam)
    got = {tuple(pt) for pt in vert.members()}
    want = set()
    j0 = int(np.ceil(np.max((flo - e_value) / fiber_spacing) - 1e-9))
    j1 = int(np.floor(np.min((fhi - e_value) / fiber_spacing) + 1e-9))
    for j in range(j0, j1 + 1):
        f = e_value + fiber_spacing * j
        want.add(tuple(np.concatenate((f, f))))
    diag["vertical_members"] = len(got)
    diag["vertical_expected"] = len(want)
    diag["vertical_equals_diagonal"] = got == want
    horiz = horizontal_extension(sb, conn, m, e_tuple, phi, base_window,
                                 base_spacing, pol)
    covered = bool(np.all(horiz.member))
    diag["horizontal_members"] = int(np.count_nonzero(horiz.member))
    diag["horizontal_expected"] = len(horiz.points)
    diag["horizontal_covers_window"] = covered
    ok = diag["vertical_equals_diagonal"] and covered
    return ok, diag


# ---------------------------------------------------------------------------
# Emitters


def extension_to_csv(es: ExtensionSet) -> str:
    dim = es.points.shape[1]
    if es.kind == "horizontal":
        header = [f"x{i + 1}" for i in range(dim)]
    else:
        header = [f"y{i + 1}" for i in range(dim)]
    lines = [",".join(header + ["member", "path_id"])]
    for row, pt in enumerate(es.points):
        pid = row if es.member[row] else -1
        cells = [repr(float(v)) for v in pt] + [str(int(es.member[row])), str(pid)]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def extension_to_svg(es: ExtensionSet) -> str:
    """Fixed 800 x 800 scatter; 1-d sets render on the horizontal midline."""
    dim = es.points.shape[1]
    if dim > 2:
        raise ParallelError("SVG output supports one- and two-dimensional sets")
    size, margin = 800.0, 50.0
    xs = es.points[:, 0]
    ys = es.points[:, 1] if dim == 2 else np.zeros(len(es.points))

    def scale(vals):
        lo, hi = float(np.min(vals)), float(np.max(vals))
        span = hi - lo if hi > lo else 1.0
        return (vals - lo) / span * (size - 2 * margin) + margin

    px = scale(xs)
    py = size - scale(ys)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {int(size)} {int(size)}">',
             f'<rect width="{int(size)}" height="{int(size)}" fill="white"/>']
    for i in range(len(es.points)):
        if es.member[i]:
            parts.append(f'<circle cx="{px[i]:.2f}" cy="{py[i]:.2f}" r="4.0" fill="#1f6fb2"/>')
        else:
            parts.append(f'<circle cx="{px[i]:.2f}" cy="{py[i]:.2f}" r="1.5" fill="#c8c8c8"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
