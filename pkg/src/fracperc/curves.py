"""Interface loops of d=2 configurations and metrics on curves.

Grid vertices are integer pairs ``(i, j)`` in ``0..M`` (``M = N^n``); the
cell ``(i, j)`` has corners ``(i, j)`` and ``(i+1, j+1)``. Interface edges
keep retained cells on their left, the outside of the unit square counts as
discarded, and at a vertex where two retained cells meet diagonally the
tracer turns right. Retained cells are therefore 8-connected and discarded
cells 4-connected, matching :mod:`fracperc.connectivity`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from numba import njit
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_flow

from .construction import LevelConfiguration
from .dimension import DimensionFit, box_count_series, fit_box_dimension

_DX = np.array([1, 0, -1, 0], dtype=np.int64)
_DY = np.array([0, 1, 0, -1], dtype=np.int64)
_TOL = 1e-12
_FOUR = ndimage.generate_binary_structure(2, 1)
_EIGHT = np.ones((3, 3), dtype=bool)


def _require_2d(config: LevelConfiguration) -> None:
    if config.d != 2:
        raise ValueError("interfaces are defined for d = 2 only")


def edge_validity(black: np.ndarray) -> np.ndarray:
    """``(M+1, M+1, 4)`` table: may an interface edge leave vertex (i, j) going E, N, W, S?"""
    m = black.shape[0]
    bp = np.zeros((m + 2, m + 2), dtype=bool)
    bp[1:-1, 1:-1] = black
    ne = bp[1:, 1:]     # cell (i, j)
    nw = bp[:-1, 1:]    # cell (i-1, j)
    se = bp[1:, :-1]    # cell (i, j-1)
    sw = bp[:-1, :-1]   # cell (i-1, j-1)
    out = np.empty((m + 1, m + 1, 4), dtype=bool)
    out[..., 0] = ne & ~se
    out[..., 1] = nw & ~ne
    out[..., 2] = sw & ~nw
    out[..., 3] = se & ~sw
    return out


@njit(cache=True)
def _next_dir(valid, x, y, d):
    # right turn, then straight, then left; a U-turn is never valid
    for k in (3, 0, 1):
        c = (d + k) % 4
        if valid[x, y, c]:
            return c
    return -1


@njit(cache=True)
def _trace_loops(valid, n_edges):
    m1 = valid.shape[0]
    used = np.zeros(valid.shape, dtype=np.bool_)
    vx = np.empty(n_edges, dtype=np.int64)
    vy = np.empty(n_edges, dtype=np.int64)
    starts = np.empty(n_edges + 1, dtype=np.int64)
    nv = 0
    nl = 0
    dx = (1, 0, -1, 0)
    dy = (0, 1, 0, -1)
    for i in range(m1):
        for j in range(m1):
            for d0 in range(4):
                if not valid[i, j, d0] or used[i, j, d0]:
                    continue
                starts[nl] = nv
                nl += 1
                x, y, d = i, j, d0
                while True:
                    used[x, y, d] = True
                    vx[nv] = x
                    vy[nv] = y
                    nv += 1
                    x += dx[d]
                    y += dy[d]
                    d = _next_dir(valid, x, y, d)
                    if x == i and y == j and d == d0:
                        break
    starts[nl] = nv
    return vx[:nv], vy[:nv], starts[:nl + 1]


@njit(cache=True)
def _trace_open(valid, x, y, d, stop_x, cap):
    vx = np.empty(cap, dtype=np.int64)
    vy = np.empty(cap, dtype=np.int64)
    dx = (1, 0, -1, 0)
    dy = (0, 1, 0, -1)
    n = 0
    vx[0] = x
    vy[0] = y
    n = 1
    while n < cap:
        x += dx[d]
        y += dy[d]
        vx[n] = x
        vy[n] = y
        n += 1
        if x == stop_x:
            break
        d = _next_dir(valid, x, y, d)
        if d < 0:
            break
    return vx[:n], vy[:n]


def _canonical_rotation(v: np.ndarray) -> np.ndarray:
    """Rotate a cyclic vertex list to its smallest vertex, ties by the smallest rotation."""
    keys = [tuple(r) for r in v.tolist()]
    lo = min(keys)
    cands = [k for k, key in enumerate(keys) if key == lo]
    if len(cands) > 1:
        best = min(cands, key=lambda k: keys[k:] + keys[:k])
    else:
        best = cands[0]
    return np.roll(v, -best, axis=0)


def _signed_area2(v: np.ndarray) -> int:
    x, y = v[:, 0], v[:, 1]
    return int((x * np.roll(y, -1) - np.roll(x, -1) * y).sum())


@dataclass(frozen=True, eq=False)
class OrientedLoop:
    """Closed interface loop on the level-n grid (integer vertices, closing vertex not repeated).

    ``orientation`` is +1 for counterclockwise loops (outer boundaries of
    retained clusters) and -1 for clockwise ones (boundaries of holes).
    """

    vertices: np.ndarray
    orientation: int
    spacing: float

    def __len__(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def length(self) -> float:
        return len(self) * self.spacing

    @property
    def points(self) -> np.ndarray:
        return self.vertices * self.spacing

    def directed_edges(self) -> list[tuple]:
        v = self.vertices
        w = np.roll(v, -1, axis=0)
        return [(a, b, c, e) for (a, b), (c, e) in zip(v.tolist(), w.tolist())]

    def curve(self) -> "Curve":
        pts = np.vstack([self.points, self.points[:1]])
        return Curve(pts, resolution=self.spacing)

    def key(self) -> tuple:
        return (self.orientation,) + tuple(map(tuple, self.vertices.tolist()))


@dataclass(frozen=True, eq=False)
class InterfaceSet:
    """All interface loops F_n of a configuration, as flat vertex arrays.

    Loop ``k`` occupies rows ``offsets[k]:offsets[k+1]`` of ``vertices``.
    """

    level: int
    N: int
    vertices: np.ndarray = field(repr=False)
    offsets: np.ndarray = field(repr=False)
    header: dict = field(default_factory=dict, repr=False)

    @property
    def side(self) -> int:
        return self.N**self.level

    @property
    def spacing(self) -> float:
        return float(self.N) ** (-self.level)

    @property
    def n_loops(self) -> int:
        return int(len(self.offsets) - 1)

    def __len__(self) -> int:
        return self.n_loops

    @cached_property
    def loop_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_loops), np.diff(self.offsets))

    @cached_property
    def orientations(self) -> np.ndarray:
        v = self.vertices
        if self.n_loops == 0:
            return np.zeros(0, dtype=np.int64)
        nxt = np.arange(len(v)) + 1
        nxt[self.offsets[1:] - 1] = self.offsets[:-1]
        cross = v[:, 0] * v[nxt, 1] - v[nxt, 0] * v[:, 1]
        return np.sign(np.add.reduceat(cross, self.offsets[:-1])).astype(np.int64)

    @cached_property
    def interior_runs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Loops cut at edges on the unit-square boundary.

        Returns vertex indices in run order, the run id of each, and a flag per
        run that is true for uncut (cyclic) loops.
        """
        v = self.vertices
        m = self.side
        if len(v) == 0:
            z = np.zeros(0, dtype=np.int64)
            return z, z, np.zeros(0, dtype=bool)
        nxt = np.arange(len(v)) + 1
        nxt[self.offsets[1:] - 1] = self.offsets[:-1]
        w = v[nxt]
        on_side = ((v[:, 0] == w[:, 0]) & ((v[:, 0] == 0) | (v[:, 0] == m))) | \
                  ((v[:, 1] == w[:, 1]) & ((v[:, 1] == 0) | (v[:, 1] == m)))
        cut = np.add.reduceat(on_side.astype(np.int64), self.offsets[:-1]) > 0
        whole = ~cut[self.loop_ids]
        idx = [np.flatnonzero(whole)]
        run = [self.loop_ids[idx[0]]]
        cyclic = [np.ones(self.n_loops, dtype=bool)]
        next_run = self.n_loops
        for k in np.flatnonzero(cut):
            s, e = self.offsets[k], self.offsets[k + 1]
            side = on_side[s:e]
            # start right after a boundary edge; edge i joins vertex i to i+1
            start = int(np.flatnonzero(side)[0]) + 1
            order = (np.arange(e - s) + start) % (e - s)
            cur = []
            for i in order:
                if side[i]:
                    if len(cur) > 1:
                        idx.append(s + np.asarray(cur))
                        run.append(np.full(len(cur), next_run))
                        cyclic.append(np.zeros(1, dtype=bool))
                        next_run += 1
                    cur = []
                    continue
                if not cur:
                    cur.append(i)
                cur.append((i + 1) % (e - s))
            if len(cur) > 1:
                idx.append(s + np.asarray(cur))
                run.append(np.full(len(cur), next_run))
                cyclic.append(np.zeros(1, dtype=bool))
                next_run += 1
        return (np.concatenate(idx).astype(np.int64), np.concatenate(run).astype(np.int64),
                np.concatenate(cyclic))

    def loop(self, k: int) -> OrientedLoop:
        v = self.vertices[self.offsets[k]:self.offsets[k + 1]]
        v = _canonical_rotation(v)
        return OrientedLoop(v, int(self.orientations[k]), self.spacing)

    @property
    def loops(self) -> list[OrientedLoop]:
        return [self.loop(k) for k in range(self.n_loops)]

    def curves(self) -> list["Curve"]:
        return [lp.curve() for lp in self.loops]

    def directed_edges(self) -> np.ndarray:
        """``(E, 3)`` rows ``(x, y, direction)`` with 0=E, 1=N, 2=W, 3=S."""
        v = self.vertices
        if len(v) == 0:
            return np.zeros((0, 3), dtype=np.int64)
        nxt = np.arange(len(v)) + 1
        nxt[self.offsets[1:] - 1] = self.offsets[:-1]
        step = v[nxt] - v
        d = np.select([step[:, 0] == 1, step[:, 1] == 1, step[:, 0] == -1], [0, 1, 2], 3)
        return np.column_stack([v, d])

    def canonical_keys(self) -> list[tuple]:
        return sorted(lp.key() for lp in self.loops)

    def bboxes(self) -> tuple[np.ndarray, np.ndarray]:
        if self.n_loops == 0:
            z = np.zeros((0, 2), dtype=np.int64)
            return z, z
        lo = np.minimum.reduceat(self.vertices, self.offsets[:-1], axis=0)
        hi = np.maximum.reduceat(self.vertices, self.offsets[:-1], axis=0)
        return lo, hi

    def to_json(self) -> dict:
        return {**self.header, "level": self.level, "N": self.N,
                "loops": [{"orientation": lp.orientation, "vertices": (lp.points).tolist()}
                          for lp in self.loops]}


def trace_interfaces(config: LevelConfiguration) -> InterfaceSet:
    """Trace every interface loop of a d=2 configuration."""
    _require_2d(config)
    valid = edge_validity(np.asarray(config.grid))
    n_edges = int(valid.sum())
    vx, vy, starts = _trace_loops(valid, n_edges)
    verts = np.column_stack([vx, vy]).astype(np.int64)
    hdr = config.header()
    return InterfaceSet(config.level, config.N, verts, starts.astype(np.int64), hdr)


# -- curves ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Curve:
    """Polyline in the plane with a parametrization table ``t`` (default: normalized arc length).

    Repeated consecutive vertices are dropped. ``resolution`` is the grid
    spacing the curve was traced at, if any.
    """

    vertices: np.ndarray
    t: Optional[np.ndarray] = None
    resolution: Optional[float] = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 2)
        if len(v) == 0:
            raise ValueError("a curve needs at least one vertex")
        if len(v) > 1:
            keep = np.concatenate([[True], np.any(np.diff(v, axis=0) != 0, axis=1)])
            v = v[keep]
        object.__setattr__(self, "vertices", v)
        if self.t is None:
            seg = np.sqrt((np.diff(v, axis=0) ** 2).sum(axis=1))
            total = seg.sum()
            t = np.concatenate([[0.0], np.cumsum(seg) / total]) if total > 0 else np.zeros(len(v))
            if len(t) > 1:
                t[-1] = 1.0
        else:
            t = np.asarray(self.t, dtype=np.float64)
            if len(t) != len(v) or t[0] != 0 or (len(t) > 1 and (t[-1] != 1 or np.any(np.diff(t) <= 0))):
                raise ValueError("parametrization must run strictly from 0 to 1 over the vertices")
        object.__setattr__(self, "t", t)

    def __len__(self) -> int:
        return int(len(self.vertices))

    @property
    def length(self) -> float:
        return float(np.sqrt((np.diff(self.vertices, axis=0) ** 2).sum(axis=1)).sum())

    @property
    def is_point(self) -> bool:
        return len(self.vertices) == 1

    def at(self, s) -> np.ndarray:
        """Position at parameter value(s) ``s`` by linear interpolation."""
        s = np.asarray(s, dtype=np.float64)
        if self.is_point:
            return np.broadcast_to(self.vertices[0], s.shape + (2,)).copy()
        return np.stack([np.interp(s, self.t, self.vertices[:, 0]),
                         np.interp(s, self.t, self.vertices[:, 1])], axis=-1)

    def translated(self, v) -> "Curve":
        return Curve(self.vertices + np.asarray(v, dtype=np.float64), self.t, self.resolution)

    def to_json(self) -> dict:
        return {"vertices": self.vertices.tolist(), "t": self.t.tolist(), "resolution": self.resolution}


CurveLike = Union[Curve, np.ndarray, Sequence]


def _as_curve(c: CurveLike) -> Curve:
    return c if isinstance(c, Curve) else Curve(np.asarray(c, dtype=np.float64))


def subdivide(vertices: np.ndarray, h_sub: float) -> np.ndarray:
    """Insert evenly spaced points so no segment is longer than ``h_sub``."""
    v = np.asarray(vertices, dtype=np.float64)
    if len(v) < 2:
        return v
    seg = np.diff(v, axis=0)
    length = np.sqrt((seg * seg).sum(axis=1))
    pieces = np.maximum(np.ceil(length / h_sub - 1e-9).astype(np.int64), 1)
    seg_id = np.repeat(np.arange(len(seg)), pieces)
    first = np.repeat(np.cumsum(pieces) - pieces, pieces)
    frac = (np.arange(len(seg_id)) - first) / pieces[seg_id]
    return np.vstack([v[seg_id] + frac[:, None] * seg[seg_id], v[-1:]])


@njit(cache=True)
def _discrete_frechet(p, q):
    n, m = p.shape[0], q.shape[0]
    prev = np.empty(m)
    cur = np.empty(m)
    for i in range(n):
        for j in range(m):
            dx = p[i, 0] - q[j, 0]
            dy = p[i, 1] - q[j, 1]
            dist = math.sqrt(dx * dx + dy * dy)
            if i == 0 and j == 0:
                best = 0.0
            elif i == 0:
                best = cur[j - 1]
            elif j == 0:
                best = prev[0]
            else:
                best = min(prev[j], prev[j - 1], cur[j - 1])
            cur[j] = max(best, dist)
        prev, cur = cur, prev
    return prev[m - 1]


def discrete_frechet(p: np.ndarray, q: np.ndarray) -> float:
    """Discrete Fréchet distance between two vertex sequences (no subdivision)."""
    p = np.ascontiguousarray(p, dtype=np.float64).reshape(-1, 2)
    q = np.ascontiguousarray(q, dtype=np.float64).reshape(-1, 2)
    if len(p) == 0 or len(q) == 0:
        raise ValueError("empty curve")
    return float(_discrete_frechet(p, q))


def default_h_sub(*curves: Curve) -> float:
    res = [c.resolution for c in curves if c.resolution]
    if res:
        return min(res) / 4
    pts = np.vstack([c.vertices for c in curves])
    extent = float(np.max(pts.max(axis=0) - pts.min(axis=0)))
    return extent / 256 if extent > 0 else 1.0


def frechet_distance(c1: CurveLike, c2: CurveLike, h_sub: Optional[float] = None) -> float:
    """Fréchet distance via the discrete one on vertices subdivided to spacing ``h_sub``.

    The result is never below the continuous distance and exceeds it by at
    most ``h_sub``. Default ``h_sub`` is a quarter of the grid spacing.
    """
    a, b = _as_curve(c1), _as_curve(c2)
    if h_sub is None:
        h_sub = default_h_sub(a, b)
    if not h_sub > 0:
        raise ValueError("h_sub must be positive")
    return discrete_frechet(subdivide(a.vertices, h_sub), subdivide(b.vertices, h_sub))


def _family(F) -> list[Curve]:
    if isinstance(F, InterfaceSet):
        out = F.curves()
    else:
        out = [_as_curve(c) for c in F]
    if not out:
        raise ValueError("curve set is empty")
    return out


def curve_set_distance(F, G, h_sub: Optional[float] = None) -> float:
    """Hausdorff distance between two curve families induced by the Fréchet distance."""
    f, g = _family(F), _family(G)
    if h_sub is None:
        h_sub = default_h_sub(*f, *g)
    sf = [subdivide(c.vertices, h_sub) for c in f]
    sg = [subdivide(c.vertices, h_sub) for c in g]
    cache: dict = {}

    def dist(i, j):
        key = (i, j)
        if key not in cache:
            cache[key] = discrete_frechet(sf[i], sg[j])
        return cache[key]

    def lower(a, b):
        # endpoints are coupled in every parametrization
        return max(float(np.hypot(*(a[0] - b[0]))), float(np.hypot(*(a[-1] - b[-1]))))

    def directed(n_src, n_dst, pair, src, dst):
        worst = 0.0
        for i in range(n_src):
            order = sorted(range(n_dst), key=lambda j: lower(src[i], dst[j]))
            best = math.inf
            for j in order:
                if lower(src[i], dst[j]) >= best:
                    break
                best = min(best, pair(i, j))
            worst = max(worst, best)
        return worst

    return max(directed(len(sf), len(sg), dist, sf, sg),
               directed(len(sg), len(sf), lambda i, j: dist(j, i), sg, sf))


def hausdorff_of_images(p: np.ndarray, q: np.ndarray) -> float:
    """Hausdorff distance between two finite point sets (brute force in blocks)."""
    from scipy.spatial import cKDTree

    p = np.asarray(p, dtype=np.float64).reshape(-1, 2)
    q = np.asarray(q, dtype=np.float64).reshape(-1, 2)
    return float(max(cKDTree(q).query(p)[0].max(), cKDTree(p).query(q)[0].max()))


# -- annuli ------------------------------------------------------------------

@dataclass(frozen=True)
class AnnulusSpec:
    """Square annulus ``B(x, R) \\ open B(x, r)``; ``B(x, s)`` has side ``s``, clipped to the unit square."""

    center: tuple
    r: float
    R: float

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        if len(c) != 2:
            raise ValueError("annulus centre must be a point of the plane")
        if any(v < -_TOL or v > 1 + _TOL for v in c):
            raise ValueError("annulus centre must lie in [0, 1]^2")
        if not 0 < self.r < self.R:
            raise ValueError(f"need 0 < r < R, got r={self.r}, R={self.R}")
        object.__setattr__(self, "center", c)

    def chebyshev(self, pts: np.ndarray) -> np.ndarray:
        return np.max(np.abs(np.asarray(pts, dtype=np.float64) - np.asarray(self.center)), axis=-1)


def _vertex_classes(F: InterfaceSet, a: AnnulusSpec) -> np.ndarray:
    dist = a.chebyshev(F.vertices * F.spacing)
    cls = np.zeros(len(dist), dtype=np.int8)
    cls[dist <= a.r / 2 + _TOL] = 1
    cls[dist >= a.R / 2 - _TOL] = 2
    return cls


def annulus_interface_crossings(F: InterfaceSet, a: AnnulusSpec) -> int:
    """Number of loop sub-arcs joining the inner to the outer boundary inside the annulus.

    Edges on the boundary of the unit square are not interfaces between
    cells, so loops are first cut there into open runs (a loop away from the
    boundary stays one cyclic run). Each run is read as a word in
    {inner, middle, outer}; crossings are the inner-outer alternations once
    middle letters are dropped. Requires ``r`` at least the grid spacing, so
    that a loop meets the closed inner box exactly when one of its vertices
    does.
    """
    if a.r < F.spacing * (1 - 1e-9):
        raise ValueError(f"inner size r={a.r} below the grid spacing {F.spacing}")
    if F.n_loops == 0:
        return 0
    idx, run, cyclic = F.interior_runs
    cls = _vertex_classes(F, a)[idx]
    keep = cls > 0
    if not keep.any():
        return 0
    c = cls[keep]
    ids = run[keep]
    same = ids[1:] == ids[:-1]
    changes = int(np.count_nonzero(same & (c[1:] != c[:-1])))
    # close cyclic runs: last kept letter against the first
    first = np.flatnonzero(np.concatenate([[True], ~same]))
    last = np.concatenate([first[1:] - 1, [len(c) - 1]])
    closing = cyclic[ids[first]] & (c[first] != c[last])
    return changes + int(np.count_nonzero(closing))


def _annulus_cells(config: LevelConfiguration, a: AnnulusSpec):
    m, h = config.side, config.spacing
    cx, cy = a.center
    idx = np.arange(m)
    lo, hi = idx * h, (idx + 1) * h

    def axis_tests(c):
        meet_outer = (hi >= c - a.R / 2 - _TOL) & (lo <= c + a.R / 2 + _TOL)
        in_open_inner = (lo > c - a.r / 2 + _TOL) & (hi < c + a.r / 2 - _TOL)
        meet_inner = (hi >= c - a.r / 2 - _TOL) & (lo <= c + a.r / 2 + _TOL)
        leave_outer = (lo <= c - a.R / 2 + _TOL) | (hi >= c + a.R / 2 - _TOL)
        return meet_outer, in_open_inner, meet_inner, leave_outer

    ox, ix, mx, lx = axis_tests(cx)
    oy, iy, my, ly = axis_tests(cy)
    usable = np.outer(ox, oy) & ~np.outer(ix, iy)
    src = usable & np.outer(mx, my)
    snk = usable & (lx[:, None] | ly[None, :])
    return usable, src, snk


def annulus_black_crossings(config: LevelConfiguration, a: AnnulusSpec) -> int:
    """Maximum number of vertex-disjoint retained paths from the inner to the outer boundary.

    Paths use Chebyshev adjacency and only cells meeting the closed annulus;
    computed as a unit node-capacity maximum flow.
    """
    _require_2d(config)
    if config.z_n == 0:
        return 0
    usable, src, snk = _annulus_cells(config, a)
    cells = usable & np.asarray(config.grid)
    k = int(cells.sum())
    if k == 0 or not (cells & src).any() or not (cells & snk).any():
        return 0
    ids = np.full(cells.shape, -1, dtype=np.int64)
    ids[cells] = np.arange(k)
    rows, cols = [], []
    m = cells.shape[0]
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            if not (dx or dy):
                continue
            a_sl = (slice(max(0, -dx), m - max(0, dx)), slice(max(0, -dy), m - max(0, dy)))
            b_sl = (slice(max(0, dx), m - max(0, -dx)), slice(max(0, dy), m - max(0, -dy)))
            both = cells[a_sl] & cells[b_sl]
            rows.append(ids[a_sl][both])
            cols.append(ids[b_sl][both])
    u = np.concatenate(rows)
    v = np.concatenate(cols)
    s, t = 2 * k, 2 * k + 1
    src_ids = ids[cells & src]
    snk_ids = ids[cells & snk]
    tail = np.concatenate([2 * np.arange(k), 2 * u + 1, np.full(len(src_ids), s), 2 * snk_ids + 1])
    head = np.concatenate([2 * np.arange(k) + 1, 2 * v, 2 * src_ids, np.full(len(snk_ids), t)])
    graph = csr_matrix((np.ones(len(tail), dtype=np.int32), (tail, head)), shape=(2 * k + 2, 2 * k + 2))
    return int(maximum_flow(graph, s, t).flow_value)


# -- lowest crossing ---------------------------------------------------------

def region_above(config: LevelConfiguration) -> Optional[np.ndarray]:
    """Cells above the lowest crossing, or ``None`` without a left-right crossing.

    Discarded cells 4-connected to the bottom row form the bottom region; the
    region above is made of the remaining cells 8-connected to the top row.
    """
    _require_2d(config)
    black = np.asarray(config.grid)
    white = ~black
    lab, _ = ndimage.label(white, structure=_FOUR)
    ids = np.unique(lab[:, 0])
    bottom = np.isin(lab, ids[ids > 0])
    if bottom[:, -1].any():
        return None
    lab2, _ = ndimage.label(~bottom, structure=_EIGHT)
    ids = np.unique(lab2[:, -1])
    return np.isin(lab2, ids[ids > 0])


def lowest_crossing_vertices(config: LevelConfiguration) -> Optional[np.ndarray]:
    """Integer vertices of the lowest crossing, from the left side to the right side."""
    up = region_above(config)
    if up is None:
        return None
    m = up.shape[0]
    a = int(np.argmax(up[0]))
    valid = edge_validity(up)
    vx, vy = _trace_open(valid, 0, a, 0, m, 4 * (m + 1) ** 2)
    return np.column_stack([vx, vy])


def lowest_crossing(config: LevelConfiguration) -> Optional[Curve]:
    """The lowest interface segment joining the left and right sides, or ``None``."""
    v = lowest_crossing_vertices(config)
    if v is None:
        return None
    return Curve(v * config.spacing, resolution=config.spacing)


# -- regularity --------------------------------------------------------------

@dataclass(frozen=True)
class HolderFit:
    """Fit ``M(h) ~ M_hat h^alpha`` of the arc-length modulus of continuity."""

    alpha: float
    M: float
    h: np.ndarray = field(repr=False)
    modulus: np.ndarray = field(repr=False)
    fit_range: tuple = (0.0, 0.0)
    r_squared: float = 1.0

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "M": self.M, "fit_range": list(self.fit_range),
                "r_squared": self.r_squared, "h": self.h.tolist(), "modulus": self.modulus.tolist()}


def _lag_displacement(c: Curve, s: float) -> float:
    # max |gamma(t+s) - gamma(t)|; piecewise convex in t, so breakpoints suffice
    t = c.t
    cand = np.concatenate([t[t <= 1 - s], t[t >= s] - s])
    d = c.at(cand + s) - c.at(cand)
    return float(np.sqrt((d * d).sum(axis=1)).max())


def modulus_of_continuity(c: Curve, h: np.ndarray, refine: int = 4) -> np.ndarray:
    """``M(h) = max_{|t1 - t2| <= h} |gamma(t1) - gamma(t2)|`` on a grid of ``h``.

    Lags are sampled on a finer log grid (``refine`` points per requested
    ``h``) and cumulative maxima taken.
    """
    h = np.sort(np.asarray(h, dtype=np.float64))
    lags = np.unique(np.concatenate([np.geomspace(h[0] / 2, h[-1], refine * len(h)), h]))
    g = np.array([_lag_displacement(c, s) for s in lags])
    g = np.maximum.accumulate(g)
    return g[np.searchsorted(lags, h)]


def holder_fit(c: CurveLike, h_range: Optional[tuple] = None, points: int = 24) -> HolderFit:
    """Log-log fit of the modulus of continuity under normalized arc length."""
    c = _as_curve(c)
    if len(c) < 3 and not (len(c) == 2 and c.length > 0):
        raise ValueError("Hölder fit needs a curve with at least 3 vertices")
    if c.length <= 0:
        raise ValueError("degenerate curve")
    if h_range is None:
        h_range = (min(0.25, 4.0 / max(len(c) - 1, 1)), 0.25)
    lo, hi = h_range
    if lo >= hi:
        lo = hi / 16
    h = np.geomspace(lo, hi, points)
    mod = modulus_of_continuity(c, h)
    x, y = np.log(h), np.log(mod)
    A = np.vstack([x, np.ones_like(x)]).T
    (alpha, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (alpha * x + icpt)
    ss = float(((y - y.mean()) ** 2).sum())
    r2 = 1 - float((resid**2).sum()) / ss if ss > 0 else 1.0
    # arc length makes every curve 1-Lipschitz up to a constant, so alpha <= 1 up to rounding
    return HolderFit(float(min(alpha, 1.0)), float(math.exp(icpt)), h, mod, (float(lo), float(hi)), r2)


def curve_box_dimension(c: CurveLike, scales: Iterable[int], N: int = 2, window=None) -> DimensionFit:
    """Box-count fit of a polyline's image on the N-adic grid."""
    c = _as_curve(c)
    scales = list(scales)
    if len(scales) < 3:
        raise ValueError("need at least 3 scales")
    return fit_box_dimension(box_count_series(c.vertices, scales, N=N, label="curve"),
                             window or (min(scales), max(scales)))


def hausdorff_set_distance(F: InterfaceSet, config: LevelConfiguration) -> float:
    """Hausdorff distance between the union of loop images and the union of retained cells.

    Evaluated on the lattice of cell corners, edge midpoints and cell
    centres (spacing h/2). Loops lie on the cell union's boundary, so this is
    the largest distance from a retained point to the nearest loop.
    """
    _require_2d(config)
    if config.z_n == 0 or F.n_loops == 0:
        if config.z_n == 0 and F.n_loops == 0:
            return 0.0
        return math.inf
    m = config.side
    fine = 2 * m + 1
    on_curve = np.zeros((fine, fine), dtype=bool)
    v = F.vertices
    nxt = np.arange(len(v)) + 1
    nxt[F.offsets[1:] - 1] = F.offsets[:-1]
    on_curve[2 * v[:, 0], 2 * v[:, 1]] = True
    mids = v + v[nxt]
    on_curve[mids[:, 0], mids[:, 1]] = True
    covered = np.zeros((fine, fine), dtype=bool)
    black = np.asarray(config.grid)
    for dx in range(3):
        for dy in range(3):
            covered[dx:dx + 2 * m:2, dy:dy + 2 * m:2] |= black
    dist = ndimage.distance_transform_edt(~on_curve)
    return float(dist[covered].max() * config.spacing / 2)


# -- rectangles --------------------------------------------------------------

def rectangle_interface_crossing(F: InterfaceSet, rect, axis: int) -> bool:
    """Does a loop arc inside the closed rectangle join its two sides normal to ``axis``?

    The rectangle must be aligned with the level-n grid.
    """
    m = F.side
    r = np.asarray(rect, dtype=np.float64).reshape(2, 2) * m
    ri = np.round(r).astype(np.int64)
    if np.any(np.abs(r - ri) > 1e-7):
        raise ValueError("rectangle is not aligned with the interface grid")
    if np.any(ri[:, 1] <= ri[:, 0]):
        raise ValueError("degenerate rectangle")
    if F.n_loops == 0:
        return False
    a = axis - 1
    v = F.vertices
    inside = np.all((v >= ri[:, 0]) & (v <= ri[:, 1]), axis=1)
    on_lo = inside & (v[:, a] == ri[a, 0])
    on_hi = inside & (v[:, a] == ri[a, 1])
    lo_box, hi_box = F.bboxes()
    cand = np.flatnonzero((lo_box[:, a] <= ri[a, 0]) & (hi_box[:, a] >= ri[a, 1]))
    for k in cand:
        s, e = F.offsets[k], F.offsets[k + 1]
        ins, lo_, hi_ = inside[s:e], on_lo[s:e], on_hi[s:e]
        if not (lo_.any() and hi_.any()):
            continue
        if ins.all():
            return True
        # rotate so the word starts just after an outside vertex, then split into runs
        start = int(np.flatnonzero(~ins)[0])
        ins, lo_, hi_ = np.roll(ins, -start), np.roll(lo_, -start), np.roll(hi_, -start)
        run = np.cumsum(~ins)
        for rid in np.unique(run[ins]):
            sel = ins & (run == rid)
            if lo_[sel].any() and hi_[sel].any():
                return True
    return False
