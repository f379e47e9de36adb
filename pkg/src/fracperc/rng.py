"""Stateless counter-based uniforms keyed by (seed, level, cell coordinates).

Every cell of the N-adic tree gets its own uniform variate, derived by
chaining a 64-bit avalanche mixer over the words of its key. Nothing is
sequential, so any subtree, any trial and any value of ``p`` can be
regenerated independently and bit-for-bit.
"""

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_WORD = 0xD1B54A32D192ED03
_SALT_LEVEL = 0x8CB92BA72F3D8DD7
_SALT_TRIAL = 0xA0761D6478BD642F

_U_GOLDEN = np.uint64(GOLDEN)
_U_M1 = np.uint64(_M1)
_U_M2 = np.uint64(_M2)
_U_WORD = np.uint64(_WORD)
_U_SALT_LEVEL = np.uint64(_SALT_LEVEL)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a Python int (reference scalar path)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def canonical_seed(seed: int) -> int:
    """Reduce any Python int to the 64-bit seed space."""
    return int(seed) & MASK64


def trial_seed(master: int, trial: int) -> int:
    """Seed of trial ``trial`` derived from a master seed."""
    return mix64(mix64(canonical_seed(master) ^ _SALT_TRIAL) ^ ((trial * GOLDEN + 1) & MASK64))


def trial_seeds(master: int, trials: int, start: int = 0) -> np.ndarray:
    return np.array([trial_seed(master, t) for t in range(start, start + trials)], dtype=np.uint64)


def cell_uniform_scalar(seed: int, level: int, coords) -> float:
    """Pure-Python evaluation of :func:`cell_uniforms` for one cell.

    ``coords`` are 0-based. Used as an independent reference for the
    vectorised kernel.
    """
    h = mix64(canonical_seed(seed) + GOLDEN)
    h = mix64(h ^ ((level * _WORD + _SALT_LEVEL) & MASK64))
    for axis, c in enumerate(coords):
        h = mix64(h ^ mix64((int(c) * _WORD + (axis + 1) * GOLDEN) & MASK64))
    return (h >> 11) * _INV53


@njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> _S30)) * _U_M1
    z = (z ^ (z >> _S27)) * _U_M2
    return z ^ (z >> _S31)


@njit(cache=True)
def _cell_hash(seed, level, row):
    h = _mix(seed + _U_GOLDEN)
    h = _mix(h ^ (np.uint64(level) * _U_WORD + _U_SALT_LEVEL))
    for axis in range(row.shape[0]):
        c = np.uint64(row[axis])
        h = _mix(h ^ _mix(c * _U_WORD + np.uint64(axis + 1) * _U_GOLDEN))
    return h


@njit(cache=True)
def _uniforms(seeds, level, coords):
    m = coords.shape[0]
    out = np.empty(m, dtype=np.float64)
    for i in range(m):
        out[i] = np.float64(_cell_hash(seeds[i], level, coords[i]) >> _S11) * _INV53
    return out


@njit(cache=True)
def _expand_children(seeds, parents, level, N, p, offsets):
    # children of every parent at ``level`` that pass their own retention test
    m = parents.shape[0]
    k = offsets.shape[0]
    d = parents.shape[1]
    keep = np.zeros(m * k, dtype=np.bool_)
    kids = np.empty((m * k, d), dtype=np.int64)
    row = np.empty(d, dtype=np.int64)
    count = 0
    for i in range(m):
        for j in range(k):
            for a in range(d):
                row[a] = parents[i, a] * N + offsets[j, a]
            u = np.float64(_cell_hash(seeds[i], level, row) >> _S11) * _INV53
            idx = i * k + j
            for a in range(d):
                kids[idx, a] = row[a]
            if u < p:
                keep[idx] = True
                count += 1
    return kids, keep, count


def cell_uniforms(seed, level: int, coords: np.ndarray) -> np.ndarray:
    """Uniform variates in [0, 1) for an array of 0-based cell coordinates.

    ``seed`` is either a scalar or one seed per row.
    """
    coords = np.ascontiguousarray(coords, dtype=np.int64)
    if coords.ndim == 1:
        coords = coords[None, :]
    seeds = np.broadcast_to(np.asarray(seed, dtype=np.uint64), (coords.shape[0],))
    return _uniforms(np.ascontiguousarray(seeds), int(level), coords)


def child_offsets(N: int, d: int) -> np.ndarray:
    """All N**d offset vectors of the children of a cell, lexicographic."""
    grids = np.meshgrid(*([np.arange(N)] * d), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)


def expand_children(seeds: np.ndarray, parents: np.ndarray, level: int, N: int, p: float,
                    offsets: np.ndarray):
    """Return ``(children, parent_index)`` of the surviving children at ``level``."""
    parents = np.ascontiguousarray(parents, dtype=np.int64)
    seeds = np.ascontiguousarray(seeds, dtype=np.uint64)
    if parents.shape[0] == 0:
        return np.empty((0, parents.shape[1]), dtype=np.int64), np.empty(0, dtype=np.int64)
    kids, keep, _ = _expand_children(seeds, parents, int(level), int(N), float(p), offsets)
    idx = np.flatnonzero(keep)
    return kids[idx], idx // offsets.shape[0]
