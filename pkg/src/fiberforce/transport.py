"""Connections as horizontal-lift fields and numerical parallel transport.

A connection on the trivial bundle is stored as the k x n lift matrix L(m, a):
the horizontal lift of a base velocity v at (m, a) is the fiber velocity
L(m, a) @ v, so transport along a path solves y' = L(sigma(t), y) sigma'(t).
The induced vertical projector (v_b, v_f) -> (0, v_f - L v_b) is idempotent
with vertical image by construction, which is why only L is stored.

Integration is classical fixed-step RK4; the path data (positions and exact
forward-mode velocities) is precomputed on a half-step grid so pulled-back and
direct-sum connections can reuse one integrator by transforming that data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bundle import BaseBox, FiberBundle, SmoothMap, base_var_names
from .expr import Expr, compile_expr, compile_expr_raw, free_vars


class TransportError(ValueError):
    pass


class BaseEscapeError(TransportError):
    pass


class FiberEscapeError(TransportError):
    """The lift left the configured fiber window: the symptom a non-complete
    connection would show; surfaced instead of assumed away."""


class Connection:
    """Expression-backed lift field on a trivial bundle."""

    def __init__(self, bundle: FiberBundle, entries):
        k, n = bundle.fiber_dim, bundle.base.dim
        entries = tuple(tuple(row) for row in entries)
        if len(entries) != k or any(len(row) != n for row in entries):
            raise TransportError(f"lift field must be a {k} x {n} matrix of expressions")
        allowed = set(base_var_names(n)) | {f"y{i + 1}" for i in range(k)}
        for row in entries:
            for e in row:
                extra = free_vars(e) - allowed
                if extra:
                    raise TransportError(f"lift entry uses undeclared variables {sorted(extra)}")
        self.bundle = bundle
        self.entries = entries

    @property
    def base_box(self) -> BaseBox:
        return self.bundle.base

    @property
    def base_dim(self) -> int:
        return self.bundle.base.dim

    @property
    def fiber_dim(self) -> int:
        return self.bundle.fiber_dim

    def lift(self, m, a) -> np.ndarray:
        """L(m, a) as a (fiber_dim, base_dim) matrix."""
        env = {f"x{i + 1}": np.asarray([float(m[i])]) for i in range(self.base_dim)}
        for i in range(self.fiber_dim):
            env[f"y{i + 1}"] = np.asarray([float(a[i])])
        out = np.empty((self.fiber_dim, self.base_dim))
        for r, row in enumerate(self.entries):
            for c, e in enumerate(row):
                out[r, c] = float(np.asarray(compile_expr(e)(env)).reshape(-1)[0])
        return out

    def path_rhs(self, pos_half: np.ndarray, vel_half: np.ndarray, cols=None):
        """rhs(half_index, y) -> dy/dt for a batch of lifts over paths sampled
        on the half-step grid.

        pos_half/vel_half: (S, Q, base_dim). When several batch rows share a
        path, `cols` maps batch row -> path column, avoiding materialized
        repeats. Entries run in raw compiled form: the integrator checks the
        final states for finiteness once."""
        fns = [[compile_expr_raw(e) for e in row] for row in self.entries]
        k, n = self.fiber_dim, self.base_dim

        def rhs(idx: int, y: np.ndarray) -> np.ndarray:
            pos = pos_half[idx]
            vel = vel_half[idx]
            if cols is not None:
                pos = pos[cols]
                vel = vel[cols]
            env = {f"x{i + 1}": pos[:, i] for i in range(n)}
            for i in range(k):
                env[f"y{i + 1}"] = y[:, i]
            out = np.zeros((len(y), k))
            for r in range(k):
                acc = out[:, r]
                for c in range(n):
                    acc += fns[r][c](env) * vel[:, c]
            return out

        return rhs


class _PullbackConnection(Connection):
    """Lift field L'(n, a) = L(h(n), a) @ J_h(n), realized by transforming the
    path data and delegating to the inner connection."""

    def __init__(self, inner: Connection, h: SmoothMap, source_box: BaseBox):
        from .bundle import _check_image

        if h.target_dim != inner.base_dim:
            raise TransportError("map target must match the inner base dimension")
        if h.source_dim != source_box.dim:
            raise TransportError("source box must match the map source dimension")
        _check_image(h, source_box, inner.base_box)
        self.bundle = FiberBundle(source_box, inner.fiber_dim)
        self.inner = inner
        self.map = h

    def lift(self, m, a) -> np.ndarray:
        m = np.asarray(m, dtype=float)
        image = self.map(m)
        basis = np.eye(self.base_dim)
        columns = [self.map.jacobian_apply(m[None, :], basis[i][None, :])[0]
                   for i in range(self.base_dim)]
        jac = np.stack(columns, axis=-1)  # (target_dim, source_dim)
        return self.inner.lift(image, a) @ jac

    def path_rhs(self, pos_half, vel_half, cols=None):
        S, Q, d = pos_half.shape
        flat = pos_half.reshape(S * Q, d)
        flat_v = vel_half.reshape(S * Q, d)
        inner_pos = self.map.values(flat).reshape(S, Q, self.inner.base_dim)
        inner_vel = self.map.jacobian_apply(flat, flat_v).reshape(S, Q, self.inner.base_dim)
        return self.inner.path_rhs(inner_pos, inner_vel, cols)


class _DirectSumConnection(Connection):
    """Blockwise lift: each fiber block of the k-fold sum transports
    independently under the inner connection."""

    def __init__(self, inner: Connection, count: int):
        if count < 1:
            raise TransportError("direct sum count must be >= 1")
        self.bundle = FiberBundle(inner.base_box, count * inner.fiber_dim)
        self.inner = inner
        self.count = count

    def lift(self, m, a) -> np.ndarray:
        fd = self.inner.fiber_dim
        out = np.zeros((self.fiber_dim, self.base_dim))
        for j in range(self.count):
            out[j * fd:(j + 1) * fd, :] = self.inner.lift(m, a[j * fd:(j + 1) * fd])
        return out

    def path_rhs(self, pos_half, vel_half, cols=None):
        S, Q, n = pos_half.shape
        if cols is None:
            cols = np.arange(Q)
        inner_cols = np.repeat(np.asarray(cols), self.count)
        inner_rhs = self.inner.path_rhs(pos_half, vel_half, inner_cols)
        fd = self.inner.fiber_dim

        def rhs(idx: int, y: np.ndarray) -> np.ndarray:
            B = len(y)
            blocks = y.reshape(B * self.count, fd)
            return inner_rhs(idx, blocks).reshape(B, self.count * fd)

        return rhs


@dataclass(frozen=True)
class TransportResult:
    ts: np.ndarray        # knot parameters, first equals t0
    states: np.ndarray    # (len(ts), fiber_dim) lift samples
    step: float
    terminal: np.ndarray

    def samples(self):
        return list(zip(self.ts.tolist(), [row.copy() for row in self.states]))


def integrate_lift(rhs, y0: np.ndarray, n_steps: int, h: float) -> np.ndarray:
    """Fixed-step RK4 over precomputed half-grid path data.

    y0: (B, k). Returns (n_steps + 1, B, k). h may be negative (backward
    integration). The lift field runs unchecked inside the loop; a non-finite
    excursion propagates to the states and is rejected here once."""
    y = np.array(y0, dtype=float)
    out = np.empty((n_steps + 1,) + y.shape)
    out[0] = y
    for i in range(n_steps):
        k1 = rhs(2 * i, y)
        k2 = rhs(2 * i + 1, y + 0.5 * h * k1)
        k3 = rhs(2 * i + 1, y + 0.5 * h * k2)
        k4 = rhs(2 * i + 2, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[i + 1] = y
    if not np.all(np.isfinite(out[-1])):
        raise TransportError("lift diverged to a non-finite value")
    return out


def path_half_grid(sigma: SmoothMap, t0: float, t1: float, h: float):
    """Positions and velocities of a 1-parameter path on the RK4 half grid.

    Returns (ts, pos_half, vel_half, n_steps, h_signed); the actual step is
    (t1 - t0) / n_steps with n_steps chosen to honor |h| as closely as a fixed
    count allows."""
    if sigma.source_dim != 1:
        raise TransportError("paths must have a 1-dimensional source")
    span = t1 - t0
    if span == 0.0 or h <= 0.0:
        raise TransportError("need a nonzero span and a positive step")
    n_steps = max(1, int(round(abs(span) / h)))
    h_signed = span / n_steps
    ts_half = t0 + 0.5 * h_signed * np.arange(2 * n_steps + 1)
    pos_half = sigma.values(ts_half[:, None])[:, None, :]
    vel_half = sigma.jacobian_apply(ts_half[:, None], np.ones((len(ts_half), 1)))[:, None, :]
    ts = ts_half[::2]
    return ts, pos_half, vel_half, n_steps, h_signed


def parallel_transport(c: Connection, sigma: SmoothMap, a0, t_span, h: float = 1e-3,
                       fiber_box: BaseBox | None = None) -> TransportResult:
    """Horizontal lift of sigma starting at a0 at t_span[0].

    Errors out if the path leaves the base box, or (when a fiber window is
    given) if the lift escapes it rather than silently continuing.
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    ts, pos_half, vel_half, n_steps, h_signed = path_half_grid(sigma, t0, t1, h)
    lo = np.array(c.base_box.lows) - 1e-9
    hi = np.array(c.base_box.highs) + 1e-9
    flat = pos_half[:, 0, :]
    bad = np.any((flat < lo) | (flat > hi), axis=1)
    if np.any(bad):
        t_bad = t0 + 0.5 * h_signed * int(np.argmax(bad))
        raise BaseEscapeError(f"path leaves the base box near t = {t_bad:.6g}")
    a0 = np.asarray(a0, dtype=float).reshape(1, c.fiber_dim)
    rhs = c.path_rhs(pos_half, vel_half)
    states = integrate_lift(rhs, a0, n_steps, h_signed)[:, 0, :]
    if fiber_box is not None:
        flo = np.array(fiber_box.lows) - 1e-9
        fhi = np.array(fiber_box.highs) + 1e-9
        esc = np.any((states < flo) | (states > fhi), axis=1)
        if np.any(esc):
            t_bad = ts[int(np.argmax(esc))]
            raise FiberEscapeError(
                f"lift leaves the fiber window near t = {t_bad:.6g}; "
                "the connection is not complete over this window")
    return TransportResult(ts=ts, states=states, step=h_signed, terminal=states[-1].copy())


def pullback_connection(c: Connection, h: SmoothMap, source_box: BaseBox) -> Connection:
    return _PullbackConnection(c, h, source_box)


def direct_sum_connection(c: Connection, k: int) -> Connection:
    if k == 1:
        return c
    return _DirectSumConnection(c, k)


def lift_uniqueness_gap(c: Connection, sigma: SmoothMap, a, delta: float, t_span,
                        h: float = 1e-3) -> float:
    """Max-norm gap over shared sample times between the lift from a and the
    lift from a + delta (delta added to every component). Zero perturbation
    must certify a zero gap."""
    t0, t1 = float(t_span[0]), float(t_span[1])
    ts, pos_half, vel_half, n_steps, h_signed = path_half_grid(sigma, t0, t1, h)
    a = np.asarray(a, dtype=float).reshape(c.fiber_dim)
    y0 = np.stack([a, a + delta], axis=0)
    rhs = c.path_rhs(pos_half, vel_half, cols=np.array([0, 0]))
    states = integrate_lift(rhs, y0, n_steps, h_signed)
    return float(np.max(np.abs(states[:, 0, :] - states[:, 1, :])))


def _segment_rhs(c: Connection, p: np.ndarray, q: np.ndarray, n_steps: int):
    ts = np.linspace(0.0, 1.0, 2 * n_steps + 1)
    pos_half = (p[None, :] + ts[:, None] * (q - p)[None, :])[:, None, :]
    vel_half = np.broadcast_to((q - p)[None, None, :], pos_half.shape).copy()
    return c.path_rhs(pos_half, vel_half)


def transport_along_segment(c: Connection, p, q, a0, h: float = 1e-3) -> np.ndarray:
    """Lift samples along the straight base segment p -> q (arc-length step)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    length = float(np.linalg.norm(q - p))
    n_steps = max(1, int(round(length / h))) if length > 0 else 1
    rhs = _segment_rhs(c, p, q, n_steps)
    y0 = np.asarray(a0, dtype=float).reshape(1, c.fiber_dim)
    return integrate_lift(rhs, y0, n_steps, 1.0 / n_steps)[:, 0, :]


def curvature_estimate(c: Connection, m, a, i: int, j: int, r: float,
                       h: float = 1e-3) -> np.ndarray:
    """Holonomy defect per unit loop area.

    Transports a around the square loop m -> m+r e_i -> m+r e_i+r e_j ->
    m+r e_j -> m and divides the fiber defect by r^2. With this orientation
    the estimate converges to the curvature pairing of the lifted coordinate
    fields as r -> 0 (matches the finite-difference bracket oracle).
    """
    m = np.asarray(m, dtype=float)
    if i == j:
        raise TransportError("loop axes must differ")
    e_i = np.zeros(c.base_dim)
    e_i[i] = r
    e_j = np.zeros(c.base_dim)
    e_j[j] = r
    corners = [m, m + e_i, m + e_i + e_j, m + e_j, m]
    for p in corners:
        if not c.base_box.contains(p):
            raise BaseEscapeError(f"loop corner {p.tolist()} outside the base box")
    y = np.asarray(a, dtype=float).copy()
    for p, q in zip(corners[:-1], corners[1:]):
        y = transport_along_segment(c, p, q, y, h)[-1]
    return (y - np.asarray(a, dtype=float)) / (r * r)
