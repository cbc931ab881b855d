"""Deterministic nested ball sampling for the neighborhood semantics.

The candidate radii are eps0 * 2^-k for k = 0..K. One master point set per
center holds the center itself plus N points in every annulus between
consecutive radii, so the sample set of a smaller radius is literally a subset
of every larger one: a check that passes on all samples of some ball passes on
all smaller scheduled balls by construction.

Offsets are low-discrepancy (Halton directions, Kronecker radii) with phases
derived from a hash of the center coordinates and the seed. Translation-
invariant offsets would let a sub-ball sample coincide bit-for-bit with its
parent's offset (an artificial exact hit on measure-zero sets); hashing the
center keeps sampling deterministic while avoiding such coincidences.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

_GOLDEN = 0.6180339887498949
_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19)

_MIX1 = np.uint64(0x9E3779B97F4A7C15)
_MIX2 = np.uint64(0xBF58476D1CE4E5B9)
_MIX3 = np.uint64(0x94D049BB133111EB)


def _splitmix(z: np.ndarray) -> np.ndarray:
    z = (z + _MIX1) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = ((z ^ (z >> np.uint64(30))) * _MIX2) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = ((z ^ (z >> np.uint64(27))) * _MIX3) & np.uint64(0xFFFFFFFFFFFFFFFF)
    return z ^ (z >> np.uint64(31))


@lru_cache(maxsize=64)
def _halton(count: int, dims: int) -> np.ndarray:
    out = np.empty((count, dims))
    for d in range(dims):
        base = _PRIMES[d % len(_PRIMES)]
        for i in range(count):
            f, r, n = 1.0, 0.0, i + 1
            while n > 0:
                f /= base
                r += f * (n % base)
                n //= base
            out[i, d] = r
    return out


def _phases_many(centers: np.ndarray, seed: int, count: int) -> np.ndarray:
    """(C, count) hash-derived phases in [0, 1), one row per center.

    Vectorized splitmix64 over the float bit patterns: deterministic across
    runs and platforms, well mixed, and cheap for hundreds of centers."""
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    bits = centers.view(np.uint64)
    with np.errstate(over="ignore"):
        acc = np.full(len(centers), np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
        for i in range(bits.shape[1]):
            acc = _splitmix(acc ^ (bits[:, i] + np.uint64(i + 1) * _MIX3))
        cols = [(_splitmix(acc + np.uint64(j + 1) * _MIX1)) for j in range(count)]
    out = np.stack(cols, axis=-1).astype(np.float64)
    return out / 2.0 ** 64


def _directions_many(count: int, dim: int, shifts: np.ndarray) -> np.ndarray:
    """(C, count, dim) unit directions; shifts is (C, dim) of phase offsets."""
    C = len(shifts)
    if dim == 1:
        flips = (shifts[:, 0] * 2).astype(int) % 2
        signs = np.where((np.arange(count)[None, :] + flips[:, None]) % 2 == 0, 1.0, -1.0)
        return signs[:, :, None]
    pairs = 2 * ((dim + 1) // 2)
    base = _halton(count, pairs)
    shift_full = np.zeros((C, pairs))
    shift_full[:, :min(dim, pairs)] = shifts[:, :min(dim, pairs)]
    u = (base[None, :, :] + shift_full[:, None, :]) % 1.0
    u1 = np.clip(u[:, :, 0::2], 1e-12, 1.0)
    u2 = u[:, :, 1::2]
    radial = np.sqrt(-2.0 * np.log(u1))
    gauss = np.empty((C, count, pairs))
    gauss[:, :, 0::2] = radial * np.cos(2.0 * np.pi * u2)
    gauss[:, :, 1::2] = radial * np.sin(2.0 * np.pi * u2)
    g = gauss[:, :, :dim]
    norms = np.linalg.norm(g, axis=2)
    bad = norms < 1e-12
    if np.any(bad):
        g[bad, 0] = 1.0
        norms = np.linalg.norm(g, axis=2)
    return g / norms[:, :, None]


@dataclass(frozen=True)
class SampleSet:
    """Master samples around one center: index 0 is the center, then N points
    per annulus, outermost annulus first."""

    points: np.ndarray      # (M, dim)
    radii: np.ndarray       # (M,)
    in_box: np.ndarray      # (M,) bool
    per_annulus: int
    n_radii: int            # K + 1 scheduled radii

    def indices_within(self, k: int) -> np.ndarray:
        """Row indices of the sample set of the k-th scheduled radius."""
        start = 1 + k * self.per_annulus
        return np.concatenate(([0], np.arange(start, len(self.points))))


class BallSampler:
    def __init__(self, eps0: float, halvings: int, per_annulus: int, seed: int):
        if eps0 <= 0 or halvings < 1 or per_annulus < 8:
            raise ValueError("need eps0 > 0, halvings >= 1, samples >= 8")
        self.eps0 = float(eps0)
        self.halvings = int(halvings)
        self.per_annulus = int(per_annulus)
        self.seed = int(seed)
        self.radii_schedule = tuple(self.eps0 * 2.0 ** (-k) for k in range(self.halvings + 1))

    def points_many(self, centers: np.ndarray, lo, hi) -> tuple:
        """Master sample points for many centers at once.

        Returns (points (C, M, d), in_box (C, M)); column 0 is the center."""
        centers = np.asarray(centers, dtype=float)
        C, d = centers.shape
        K, N = self.halvings, self.per_annulus
        total = (K + 1) * N
        ph = _phases_many(centers, self.seed, 2 + d)
        dirs = _directions_many(total, d, ph[:, 2:2 + d])
        idx = np.arange(total)
        u = (ph[:, 0:1] + _GOLDEN * (idx + 1)[None, :]) % 1.0
        k_of = idx // N
        eps_k = self.eps0 * 2.0 ** (-k_of.astype(float))
        inner = (k_of == K)[None, :]
        radii = np.where(inner,
                         eps_k[None, :] * np.maximum(u, 1.0 / (4.0 * N)),
                         eps_k[None, :] * (0.5 + 0.5 * u))
        points = np.concatenate(
            (centers[:, None, :], centers[:, None, :] + dirs * radii[:, :, None]), axis=1)
        in_box = np.all((points >= np.asarray(lo) - 1e-12)
                        & (points <= np.asarray(hi) + 1e-12), axis=2)
        in_box[:, 0] = True  # the center is the queried point itself
        return points, in_box

    def master(self, center, lo, hi) -> SampleSet:
        center = np.asarray(center, dtype=float)
        points, in_box = self.points_many(center[None, :], lo, hi)
        radii = np.concatenate(([0.0], np.linalg.norm(points[0, 1:] - center, axis=1)))
        return SampleSet(points[0], radii, in_box[0], self.per_annulus, self.halvings + 1)

    def sub_ball(self, center, radius: float, lo, hi) -> np.ndarray:
        """N + 1 points in one ball of the given radius (used by the density
        surrogate); deterministic like the master set."""
        center = np.asarray(center, dtype=float)
        d = len(center)
        N = self.per_annulus
        ph = _phases_many(center[None, :], self.seed ^ 0x5EED, 2 + d)[0]
        dirs = _directions_many(N, d, ph[None, 2:2 + d])[0]
        u = (ph[0] + _GOLDEN * (np.arange(N) + 1)) % 1.0
        radii = radius * np.maximum(u, 1.0 / (4.0 * N))
        points = np.concatenate((center[None, :], center[None, :] + dirs * radii[:, None]))
        keep = np.all((points >= np.asarray(lo) - 1e-12)
                      & (points <= np.asarray(hi) + 1e-12), axis=1)
        return points[keep]
