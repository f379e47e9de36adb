"""Component structure of C^n under closed-cube (Chebyshev) adjacency.

Two retained cells are adjacent when their closed boxes intersect, i.e. when
their index vectors differ by at most one on every axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull, QhullError

from . import rng
from .construction import (
    DEFAULT_MEMORY_BUDGET,
    CellIndex,
    LevelConfiguration,
    ProcessParams,
    generate_level,
)

_TOL = 1e-9


def chebyshev_structure(d: int) -> np.ndarray:
    return np.ones((3,) * d, dtype=bool)


def _relabel_first_seen(raw: np.ndarray) -> tuple[np.ndarray, int]:
    """Renumber labels 0..C-1 in order of first appearance."""
    if raw.size == 0:
        return raw.astype(np.int64), 0
    uniq, first, inv = np.unique(raw, return_index=True, return_inverse=True)
    rank = np.empty(len(uniq), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(uniq))
    return rank[inv.ravel()], len(uniq)


def _labels_dense(config: LevelConfiguration) -> np.ndarray:
    lab, _ = ndimage.label(config.grid, structure=chebyshev_structure(config.d))
    return lab[tuple(config.coords.T)]


def _labels_sparse(config: LevelConfiguration) -> np.ndarray:
    coords, side, d = config.coords, config.side, config.d
    z = coords.shape[0]
    strides = side ** np.arange(d - 1, -1, -1, dtype=np.int64)
    keys = coords @ strides
    rows, cols = [np.arange(z)], [np.arange(z)]
    offsets = np.array(np.meshgrid(*([[-1, 0, 1]] * d), indexing="ij")).reshape(d, -1).T
    for off in offsets:
        # half of the offsets suffice: the adjacency is symmetric
        nz = off[np.flatnonzero(off)[0]] if off.any() else 0
        if nz <= 0:
            continue
        nb = coords + off
        ok = np.all((nb >= 0) & (nb < side), axis=1)
        nkeys = nb[ok] @ strides
        pos = np.searchsorted(keys, nkeys)
        pos = np.minimum(pos, z - 1)
        hit = keys[pos] == nkeys
        src = np.flatnonzero(ok)[hit]
        rows.append(src)
        cols.append(pos[hit])
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    graph = coo_matrix((np.ones(len(r), dtype=np.int8), (r, c)), shape=(z, z))
    _, lab = connected_components(graph, directed=False)
    return lab


def _pair_diameter_sq(points: np.ndarray) -> int:
    # max over pairs of sum_l (|a_l - b_l| + 1)^2, in cell units
    diff = np.abs(points[:, None, :] - points[None, :, :]) + 1
    return int((diff * diff).sum(axis=2).max())


def _hull_2d(points: np.ndarray) -> np.ndarray:
    # Andrew's monotone chain; tolerant of collinear input
    pts = np.unique(points, axis=0)
    if len(pts) <= 2:
        return pts
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for q in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], q) <= 0:
            lower.pop()
        lower.append(tuple(q))
    for q in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], q) <= 0:
            upper.pop()
        upper.append(tuple(q))
    return np.array(lower[:-1] + upper[:-1], dtype=np.int64)


def _extreme_candidates(pts: np.ndarray) -> np.ndarray:
    """Cells extreme along the last axis on each line parallel to it."""
    if len(pts) <= 2:
        return pts
    keys = [pts[:, a] for a in range(pts.shape[1] - 1, -1, -1)]
    pts = pts[np.lexsort(keys)]
    head = pts[:, :-1]
    brk = np.flatnonzero(np.any(head[1:] != head[:-1], axis=1)) + 1
    starts = np.concatenate([[0], brk])
    ends = np.concatenate([brk - 1, [len(pts) - 1]])
    return np.unique(np.concatenate([pts[starts], pts[ends]]), axis=0)


def component_diameter_sq(pts: np.ndarray) -> int:
    """Squared diameter, in cell units, of the union of the closed cells ``pts``.

    The farthest corner distance between two cells is convex in their index
    difference, so the maximum is attained on hull vertices of the index set.
    """
    cand = _extreme_candidates(pts)
    if len(cand) > 48:
        if pts.shape[1] == 2:
            cand = _hull_2d(cand)
        else:
            try:
                cand = cand[ConvexHull(cand).vertices]
            except QhullError:
                pass
    return _pair_diameter_sq(cand)


@dataclass(frozen=True, eq=False)
class ComponentLabeling:
    """Partition of the retained cells of ``config`` into components.

    ``labels[i]`` is the component of ``config.coords[i]``; components are
    numbered by first appearance in lexicographic cell order. Bounding boxes
    are inclusive 0-based index ranges; diameters are Euclidean lengths of
    the union of closed cells.
    """

    config: LevelConfiguration
    labels: np.ndarray
    sizes: np.ndarray
    diameters: np.ndarray
    bbox_lo: np.ndarray
    bbox_hi: np.ndarray

    @property
    def n_components(self) -> int:
        return int(self.sizes.shape[0])

    def label_grid(self) -> np.ndarray:
        """Dense array of component ids, -1 on discarded cells."""
        g = np.full((self.config.side,) * self.config.d, -1, dtype=np.int64)
        if self.config.z_n:
            g[tuple(self.config.coords.T)] = self.labels
        return g

    def component_cells(self, cid: int) -> np.ndarray:
        return self.config.coords[self.labels == cid]

    def rows(self) -> list[dict]:
        h = self.config.spacing
        d = self.config.d
        out = []
        for cid in range(self.n_components):
            row = {"id": cid, "size": int(self.sizes[cid]), "diameter": float(self.diameters[cid])}
            for a in range(d):
                row[f"bbox_lo_x{a + 1}"] = float(self.bbox_lo[cid, a] * h)
            for a in range(d):
                row[f"bbox_hi_x{a + 1}"] = float((self.bbox_hi[cid, a] + 1) * h)
            out.append(row)
        return out

    def summary(self) -> dict:
        return {
            **self.config.header(),
            "n_components": self.n_components,
            "largest_size": int(self.sizes.max()) if self.n_components else 0,
            "max_diameter": float(self.diameters.max()) if self.n_components else 0.0,
            "left_right_crossing": left_right_crossing(self.config, self),
        }


def label_components(config: LevelConfiguration) -> ComponentLabeling:
    """Label retained cells by Chebyshev connectivity and fill per-component stats."""
    d = config.d
    if config.z_n == 0:
        empty = np.empty((0, d), dtype=np.int64)
        return ComponentLabeling(config, np.empty(0, np.int64), np.empty(0, np.int64),
                                 np.empty(0), empty, empty)
    if config.side**d <= DEFAULT_MEMORY_BUDGET // 8 and (d == 2 or config._grid is not None
                                                           or config.side**d <= 1 << 24):
        raw = _labels_dense(config)
    else:
        raw = _labels_sparse(config)
    labels, c = _relabel_first_seen(raw)
    sizes = np.bincount(labels, minlength=c)
    order = np.argsort(labels, kind="stable")
    sorted_coords = config.coords[order]
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    lo = np.minimum.reduceat(sorted_coords, starts, axis=0)
    hi = np.maximum.reduceat(sorted_coords, starts, axis=0)
    diam_sq = np.full(c, d, dtype=np.float64)
    for cid in np.flatnonzero(sizes > 1):
        pts = sorted_coords[starts[cid]:starts[cid] + sizes[cid]]
        span = hi[cid] - lo[cid] + 1
        if np.all(span == span[0]) and sizes[cid] == int(np.prod(span)):
            diam_sq[cid] = float((span * span).sum())
        else:
            diam_sq[cid] = component_diameter_sq(pts)
    diameters = np.sqrt(diam_sq) * config.spacing
    for a in (labels, sizes, diameters, lo, hi):
        a.setflags(write=False)
    return ComponentLabeling(config, labels, sizes, diameters, lo, hi)


def dust_partition(labeling: ComponentLabeling, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Split retained cells into ``(connected, dust_candidates)`` 0-based coords.

    ``connected`` holds cells of components with diameter at least ``eps``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    big = labeling.diameters >= eps * (1 - 1e-12)
    mask = big[labeling.labels] if labeling.labels.size else np.zeros(0, bool)
    coords = labeling.config.coords
    return coords[mask], coords[~mask]


def left_right_crossing(config: LevelConfiguration,
                        labeling: Optional[ComponentLabeling] = None) -> bool:
    """True iff one component touches both faces x_1 = 0 and x_1 = 1."""
    if config.z_n == 0:
        return False
    if labeling is None:
        labeling = label_components(config)
    x = config.coords[:, 0]
    left = np.unique(labeling.labels[x == 0])
    right = np.unique(labeling.labels[x == config.side - 1])
    return bool(np.intersect1d(left, right).size)


def _to_units(value: float, side: int, what: str) -> int:
    v = value * side
    r = round(v)
    if abs(v - r) > 1e-7 * max(1.0, abs(v)):
        raise ValueError(f"{what} {value} is not on the level grid (N^n = {side})")
    return int(r)


def _label_and_meet(mask: np.ndarray, sources: np.ndarray, sinks: np.ndarray) -> bool:
    src = mask & sources
    snk = mask & sinks
    if not src.any() or not snk.any():
        return False
    lab, _ = ndimage.label(mask, structure=chebyshev_structure(mask.ndim))
    return bool(np.intersect1d(lab[src], lab[snk]).size)


def rectangle_crossing(config: LevelConfiguration, rect: Sequence[Sequence[float]], axis: int) -> bool:
    """Chebyshev chain of retained cells meeting ``rect`` joining its two faces normal to ``axis``.

    ``rect`` is ``((lo_1, hi_1), ..., (lo_d, hi_d))`` in unit-cube coordinates;
    ``axis`` is 1-based. Only cells whose closed boxes meet the closed
    rectangle are used, and a cell touches a face when its box meets it.
    """
    d = config.d
    rect = np.asarray(rect, dtype=np.float64).reshape(d, 2)
    if not 1 <= axis <= d:
        raise ValueError(f"axis must be in 1..{d}")
    if np.any(rect[:, 1] - rect[:, 0] <= 0):
        raise ValueError(f"degenerate rectangle {rect.tolist()}")
    if np.any(rect < -_TOL) or np.any(rect > 1 + _TOL):
        raise ValueError("rectangle must lie in the unit cube")
    if config.z_n == 0:
        return False
    side = config.side
    v = rect * side
    cell_lo = np.maximum(np.ceil(v[:, 0] - _TOL).astype(np.int64) - 1, 0)
    cell_hi = np.minimum(np.floor(v[:, 1] + _TOL).astype(np.int64), side - 1)
    region = tuple(slice(a, b + 1) for a, b in zip(cell_lo, cell_hi))
    mask = np.asarray(config.grid[region])
    idx = np.arange(cell_lo[axis - 1], cell_hi[axis - 1] + 1)
    a = axis - 1

    def touching(x):
        return (idx <= x + _TOL) & (idx + 1 >= x - _TOL)

    shape = [1] * d
    shape[a] = len(idx)
    lo_face = np.broadcast_to(touching(v[a, 0]).reshape(shape), mask.shape)
    hi_face = np.broadcast_to(touching(v[a, 1]).reshape(shape), mask.shape)
    return _label_and_meet(mask, lo_face, hi_face)


def _ftuple(a) -> tuple:
    return tuple(float(x) for x in a)


@dataclass(frozen=True)
class ShellSpec:
    """Closed shell between two concentric boxes, later clipped to the unit cube.

    For a level-``level`` cell the inner box has side ``3 N^-level`` and the
    outer box side ``N^(1-level)``. ``center`` is ``None`` for the
    generalized (cube-centred) variant.
    """

    level: int
    N: int
    inner_lo: tuple
    inner_hi: tuple
    outer_lo: tuple
    outer_hi: tuple
    center: Optional[CellIndex] = None

    @classmethod
    def around(cls, cell: CellIndex, N: int) -> "ShellSpec":
        cell.validate(N)
        h = float(N) ** (-cell.level)
        mid = (cell.zero_based + 0.5) * h
        return cls(cell.level, N, _ftuple(mid - 1.5 * h), _ftuple(mid + 1.5 * h),
                   _ftuple(mid - 0.5 * N * h), _ftuple(mid + 0.5 * N * h), center=cell)

    @classmethod
    def cube_centred(cls, N: int, d: int, level: int = 1) -> "ShellSpec":
        """Shell around the cube centre for any N >= 4 (not the cell-centred geometry)."""
        if N < 4:
            raise ValueError("cube-centred shell needs N >= 4 (empty otherwise)")
        if level != 1:
            raise ValueError("cube-centred shell is defined at level 1 only")
        h = 1.0 / N
        mid = np.full(d, 0.5)
        return cls(level, N, _ftuple(mid - 1.5 * h), _ftuple(mid + 1.5 * h),
                   _ftuple(mid - 0.5 * N * h), _ftuple(mid + 0.5 * N * h))

    @property
    def d(self) -> int:
        return len(self.inner_lo)

    def clipped(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        il, ih = np.clip(self.inner_lo, 0, 1), np.clip(self.inner_hi, 0, 1)
        ol, oh = np.clip(self.outer_lo, 0, 1), np.clip(self.outer_hi, 0, 1)
        return il, ih, ol, oh

    def units(self, side: int) -> tuple[np.ndarray, ...]:
        """Box bounds in cell units of a grid with ``side`` cells per axis (unclipped)."""
        conv = lambda t, w: np.array([_to_units(x, side, w) for x in t], dtype=np.int64)
        return (conv(self.inner_lo, "inner box"), conv(self.inner_hi, "inner box"),
                conv(self.outer_lo, "outer box"), conv(self.outer_hi, "outer box"))


def _shell_masks(shell: ShellSpec, side: int):
    ilo, ihi, olo, ohi = shell.units(side)
    clo, chi = np.maximum(olo, 0), np.minimum(ohi, side)
    d = shell.d
    axes = [np.arange(clo[a], chi[a]) for a in range(d)]
    grids = np.meshgrid(*axes, indexing="ij")
    inside_inner = np.ones(grids[0].shape, dtype=bool)
    touch_inner = np.ones(grids[0].shape, dtype=bool)
    touch_outer = np.zeros(grids[0].shape, dtype=bool)
    for a, g in enumerate(grids):
        inside_inner &= (g >= ilo[a]) & (g < ihi[a])
        touch_inner &= (g >= ilo[a] - 1) & (g <= ihi[a])
        if olo[a] >= 0:
            touch_outer |= g == olo[a]
        if ohi[a] <= side:
            touch_outer |= g == ohi[a] - 1
    ring = ~inside_inner
    region = tuple(slice(a, b) for a, b in zip(clo, chi))
    return region, ring, ring & touch_inner, ring & touch_outer


def shell_crossing(config: LevelConfiguration, shell: ShellSpec) -> bool:
    """Retained cells inside the clipped shell join its inner and outer boundaries."""
    if shell.level > config.level:
        raise ValueError("shell level exceeds configuration level")
    if config.z_n == 0:
        return False
    region, ring, src, snk = _shell_masks(shell, config.side)
    if ring.size == 0 or not ring.any():
        return False
    mask = np.asarray(config.grid[region]) & ring
    return _label_and_meet(mask, src, snk)


def cover_start_level(N: int, d: int, eps: float) -> int:
    """Smallest level l >= 1 with N^(1-l) <= eps / d."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    l = 1
    while N ** (1 - l) > eps / d * (1 + 1e-12):
        l += 1
    return l


@dataclass(frozen=True, eq=False)
class CoverChain:
    """Shell-crossing cover of the large-component set.

    ``W[m]`` holds the level-``m`` cells of W_m whose ancestors at levels
    ``l..m-1`` are themselves in W; ``V`` is the resulting level-``n``
    collection V_n (0-based coords).
    """

    params: ProcessParams
    n: int
    eps: float
    l: int
    W: dict = field(repr=False)
    V: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return int(self.V.shape[0])

    def covers(self, coords: np.ndarray) -> bool:
        if len(coords) == 0:
            return True
        v = {tuple(r) for r in self.V.tolist()}
        return all(tuple(r) in v for r in np.asarray(coords).tolist())

    def summary(self) -> dict:
        return {**self.params.to_dict(), "n": self.n, "eps": self.eps, "l": self.l,
                "W_sizes": {int(m): int(len(w)) for m, w in self.W.items()}, "V_size": self.size}


def build_cover_chain(params: ProcessParams, n: int, eps: float) -> CoverChain:
    """Construct W_l, ..., W_n and V_n for the realization ``params`` at level ``n``.

    The shell test for W_m sees only decisions of levels ``>= m`` (levels
    below are made fully retained), evaluated at resolution ``n``.
    """
    l = cover_start_level(params.N, params.d, eps)
    if l > n:
        raise ValueError(f"eps={eps} needs resolution n >= {l} (got n={n})")
    N, d = params.N, params.d
    offsets = rng.child_offsets(N, d)
    W = {}
    cand = None
    for m in range(l, n + 1):
        if cand is None:
            side = N**m
            cand = np.stack(np.meshgrid(*([np.arange(side)] * d), indexing="ij"), -1).reshape(-1, d)
        else:
            cand = (cand[:, None, :] * N + offsets[None, :, :]).reshape(-1, d)
        if len(cand) == 0:
            W[m] = cand
            continue
        own = rng.cell_uniforms(params.seed, m, cand) < params.p
        cand = cand[own]
        partial = generate_level(params, n, full_until=m - 1)
        keep = np.zeros(len(cand), dtype=bool)
        for i, row in enumerate(cand):
            keep[i] = shell_crossing(partial, ShellSpec.around(CellIndex.from_zero_based(m, row), N))
        cand = cand[keep]
        W[m] = cand
    return CoverChain(params, n, float(eps), l, W, cand)


def batch_meets(masks: np.ndarray, sources: np.ndarray, sinks: np.ndarray) -> np.ndarray:
    """Per-sample source-sink connectivity for a stack of masks, one labeling call.

    ``masks`` has shape ``(T,) + shape``; ``sources`` and ``sinks`` broadcast
    against it. Samples are never connected to each other.
    """
    masks = np.asarray(masks, dtype=bool)
    t = masks.shape[0]
    if t == 0:
        return np.zeros(0, dtype=bool)
    d = masks.ndim - 1
    structure = np.zeros((3,) * (d + 1), dtype=bool)
    structure[1] = True
    lab, count = ndimage.label(masks, structure=structure)
    src = np.zeros(count + 1, dtype=bool)
    snk = np.zeros(count + 1, dtype=bool)
    src[lab[masks & sources]] = True
    snk[lab[masks & sinks]] = True
    both = np.flatnonzero(src & snk)
    both = both[both > 0]
    out = np.zeros(t, dtype=bool)
    if both.size:
        owner = ndimage.minimum(np.arange(t)[(slice(None),) + (None,) * d] * np.ones_like(lab),
                                lab, both)
        out[np.asarray(owner, dtype=np.int64)] = True
    return out


def batch_left_right_crossing(grids: np.ndarray) -> np.ndarray:
    """:func:`left_right_crossing` for a stack of dense grids."""
    grids = np.asarray(grids, dtype=bool)
    shape = grids.shape[1:]
    src = np.zeros(shape, dtype=bool)
    snk = np.zeros(shape, dtype=bool)
    src[0] = True
    snk[-1] = True
    return batch_meets(grids, src, snk)


def batch_shell_crossing(grids: np.ndarray, shell: ShellSpec) -> np.ndarray:
    """:func:`shell_crossing` for a stack of dense grids of one level."""
    grids = np.asarray(grids, dtype=bool)
    region, ring, src, snk = _shell_masks(shell, grids.shape[1])
    sub = grids[(slice(None),) + region] & ring
    return batch_meets(sub, src, snk)
