"""Slow, independent reference implementations used only by the tests.

Nothing here imports the package's algorithms: grids go in, plain Python
loops come out.
"""

from collections import deque
from fractions import Fraction
from itertools import product

import numpy as np

from fracperc.rng import cell_uniform_scalar


# -- construction -----------------------------------------------------------

def brute_force_level(N, d, p, seed, n):
    """Set of retained 0-based level-n cells by explicit ancestor-chain checks."""
    side = N**n
    out = set()
    for idx in product(range(side), repeat=d):
        ok = True
        for m in range(1, n + 1):
            anc = tuple(c // N ** (n - m) for c in idx)
            if not cell_uniform_scalar(seed, m, anc) < p:
                ok = False
                break
        if ok:
            out.add(idx)
    return out


# -- connectivity -----------------------------------------------------------

def _neighbours(idx, shape, diagonal=True):
    d = len(idx)
    for off in product((-1, 0, 1), repeat=d):
        if not any(off):
            continue
        if not diagonal and sum(abs(o) for o in off) != 1:
            continue
        nb = tuple(i + o for i, o in zip(idx, off))
        if all(0 <= c < s for c, s in zip(nb, shape)):
            yield nb


def flood_labels(grid, diagonal=True):
    """Component id per True cell, numbered by lexicographic first appearance."""
    grid = np.asarray(grid, dtype=bool)
    lab = {}
    nxt = 0
    for idx in zip(*np.nonzero(grid)):
        idx = tuple(int(i) for i in idx)
        if idx in lab:
            continue
        lab[idx] = nxt
        q = deque([idx])
        while q:
            c = q.popleft()
            for nb in _neighbours(c, grid.shape, diagonal):
                if grid[nb] and nb not in lab:
                    lab[nb] = nxt
                    q.append(nb)
        nxt += 1
    return lab


def brute_diameter(cells, h):
    """Largest corner-to-corner distance over all pairs of closed cells."""
    best = 0.0
    cells = [np.asarray(c) for c in cells]
    d = len(cells[0])
    corners = [np.array(v) for v in product((0, 1), repeat=d)]
    pts = [c + v for c in cells for v in corners]
    for a in pts:
        for b in pts:
            best = max(best, float(np.sum((a - b) ** 2)))
    return np.sqrt(best) * h


def bfs_meets(mask, src, snk, diagonal=True):
    """Is some True cell of ``src`` joined to one of ``snk`` through ``mask``?"""
    mask = np.asarray(mask, dtype=bool)
    seen = set()
    q = deque()
    for idx in zip(*np.nonzero(mask & src)):
        idx = tuple(int(i) for i in idx)
        seen.add(idx)
        q.append(idx)
    while q:
        c = q.popleft()
        if snk[c]:
            return True
        for nb in _neighbours(c, mask.shape, diagonal):
            if mask[nb] and nb not in seen:
                seen.add(nb)
                q.append(nb)
    return False


def rect_crossing_oracle(grid, rect, axis):
    """Cell-by-cell, with exact rational geometry."""
    side = grid.shape[0]
    d = grid.ndim
    rect = [(Fraction(lo).limit_denominator(10**6), Fraction(hi).limit_denominator(10**6))
            for lo, hi in rect]
    mask = np.zeros_like(grid, dtype=bool)
    lo_face = np.zeros_like(mask)
    hi_face = np.zeros_like(mask)
    a = axis - 1
    for idx in product(range(side), repeat=d):
        box = [(Fraction(c, side), Fraction(c + 1, side)) for c in idx]
        if not all(b0 <= r1 and b1 >= r0 for (b0, b1), (r0, r1) in zip(box, rect)):
            continue
        mask[idx] = grid[idx]
        b0, b1 = box[a]
        lo_face[idx] = b0 <= rect[a][0] <= b1
        hi_face[idx] = b0 <= rect[a][1] <= b1
    return bfs_meets(mask, lo_face, hi_face)


def shell_crossing_oracle(grid, inner, outer):
    """``inner``/``outer`` are ((lo, hi), ...) in cell units, outer possibly past the grid."""
    side = grid.shape[0]
    d = grid.ndim
    mask = np.zeros_like(grid, dtype=bool)
    src = np.zeros_like(mask)
    snk = np.zeros_like(mask)
    for idx in product(range(side), repeat=d):
        in_outer = all(o0 <= c and c + 1 <= o1 for c, (o0, o1) in zip(idx, outer))
        in_inner = all(i0 <= c and c + 1 <= i1 for c, (i0, i1) in zip(idx, inner))
        if not in_outer or in_inner:
            continue
        mask[idx] = grid[idx]
        # closed cell meets the closed inner box
        src[idx] = all(c <= i1 and c + 1 >= i0 for c, (i0, i1) in zip(idx, inner))
        # some face of the cell lies on a face of the outer box inside the cube
        snk[idx] = any((c == o0 and o0 >= 0) or (c + 1 == o1 and o1 <= side)
                       for c, (o0, o1) in zip(idx, outer))
    return bfs_meets(mask, src, snk)


def box_count_scan(cells, level, N, m):
    """Count level-m boxes meeting some cell by scanning every box."""
    d = len(next(iter(cells))) if cells else 2
    q = N ** (level - m)
    count = 0
    cells = set(cells)
    for box in product(range(N**m), repeat=d):
        hit = False
        for off in product(range(q), repeat=d):
            if tuple(b * q + o for b, o in zip(box, off)) in cells:
                hit = True
                break
        count += hit
    return count


# -- exact phi by frontier dynamic programming -------------------------------

def _canon(codes):
    """Renumber components by first appearance; 0 is white, else 4 * comp + flags + 1."""
    remap = {}
    out = []
    for c in codes:
        if c == 0:
            out.append(0)
            continue
        comp = (c - 1) >> 2
        r = remap.get(comp)
        if r is None:
            r = remap[comp] = len(remap)
        out.append(((r << 2) | ((c - 1) & 3)) + 1)
    return tuple(out)


def exact_crossing_probability(sites, p):
    """Probability that black sites join a source site to a sink site.

    ``sites`` is an ordered list of ``(coord, group, is_src, is_snk)``. A site
    is black iff its group (one Bernoulli(p) gate per group) and its own
    Bernoulli(p) variable are both up; sites sharing a group must be
    consecutive. Adjacency is Chebyshev distance 1. Exact up to float
    rounding: the state is the labelled connectivity of the processed
    frontier, and a state is absorbed once a component holds both flags.
    """
    pos = {s[0]: i for i, s in enumerate(sites)}
    nbrs = []
    for c, *_ in sites:
        nb = []
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                if dx or dy:
                    j = pos.get((c[0] + dx, c[1] + dy))
                    if j is not None:
                        nb.append(j)
        nbrs.append(nb)
    last_use = [max([i] + [j for j in nbrs[i] if j > i]) for i in range(len(sites))]
    flag_bits = [(1 if s[2] else 0) | (2 if s[3] else 0) for s in sites]

    frontier = []
    states = {((), 1): 1.0}
    success = 0.0
    for i, (_, group, _, _) in enumerate(sites):
        if i == 0 or sites[i - 1][1] != group:
            branched = {}
            for (codes, _), w in states.items():
                branched[(codes, 1)] = branched.get((codes, 1), 0.0) + w * p
                if p < 1:
                    branched[(codes, 0)] = branched.get((codes, 0), 0.0) + w * (1 - p)
            states = branched
        where = {v: k for k, v in enumerate(frontier)}
        touching = [where[j] for j in nbrs[i] if j in where]
        new_frontier = frontier + [i]
        survivors = [k for k, v in enumerate(new_frontier) if last_use[v] > i]
        nxt = {}
        fb = flag_bits[i]
        for (codes, gate), w in states.items():
            pb = p if gate else 0.0
            if pb < 1:
                full = codes + (0,)
                key = (_canon([full[k] for k in survivors]), gate)
                nxt[key] = nxt.get(key, 0.0) + w * (1 - pb)
            if pb > 0:
                merged = set()
                f = fb
                for k in touching:
                    c = codes[k]
                    if c:
                        merged.add((c - 1) >> 2)
                        f |= (c - 1) & 3
                if f == 3:
                    success += w * pb
                    continue
                new = 1 << 20
                full = [((new << 2) | f) + 1 if c and ((c - 1) >> 2) in merged else c for c in codes]
                full.append(((new << 2) | f) + 1)
                key = (_canon([full[k] for k in survivors]), gate)
                nxt[key] = nxt.get(key, 0.0) + w * pb
        frontier = [new_frontier[k] for k in survivors]
        states = nxt
    return success


def centre_shell_sites(N):
    """Level-2 sites of the level-1 centre shell for odd N, block by block around the ring.

    Inside a block, sites are swept by angle about the nearest point of the
    inner box; this keeps the frontier short at the corners.
    """
    import math
    side = N * N
    lo, hi = (N // 2 - 1) * N, (N // 2 + 2) * N  # inner box in level-2 units
    centre = (N - 1) / 2
    blocks = [(bx, by) for bx in range(N) for by in range(N)
              if not (N // 2 - 1 <= bx <= N // 2 + 1 and N // 2 - 1 <= by <= N // 2 + 1)]
    blocks.sort(key=lambda b: math.atan2(b[1] - centre, b[0] - centre))
    sites = []
    for g, (bx, by) in enumerate(blocks):
        px = min(max(bx * N + N / 2, lo), hi)
        py = min(max(by * N + N / 2, lo), hi)
        base = math.atan2(by - centre, bx - centre)

        def key(c):
            a = math.atan2(c[1] + 0.5 - py, c[0] + 0.5 - px)
            return ((a - base + math.pi) % (2 * math.pi), max(abs(c[0] + 0.5 - px), abs(c[1] + 0.5 - py)))

        cells = sorted(((bx * N + i, by * N + j) for i in range(N) for j in range(N)), key=key)
        for (x, y) in cells:
            src = lo - 1 <= x <= hi and lo - 1 <= y <= hi
            snk = x in (0, side - 1) or y in (0, side - 1)
            sites.append(((x, y), g, src, snk))
    return sites


def brute_crossing_probability(sites, p):
    """Same quantity as :func:`exact_crossing_probability` by summing over all outcomes."""
    groups = sorted({s[1] for s in sites})
    coords = [s[0] for s in sites]
    xs = [c[0] for c in coords]
    ys = [c[1] for c in coords]
    x0, y0 = min(xs), min(ys)
    shape = (max(xs) - x0 + 1, max(ys) - y0 + 1)
    src = np.zeros(shape, bool)
    snk = np.zeros(shape, bool)
    for (x, y), _, a, b in sites:
        src[x - x0, y - y0] = a
        snk[x - x0, y - y0] = b
    total = 0.0
    for gates in product((0, 1), repeat=len(groups)):
        wg = np.prod([p if g else 1 - p for g in gates])
        live = [i for i, s in enumerate(sites) if gates[groups.index(s[1])]]
        for bits in product((0, 1), repeat=len(live)):
            w = wg * np.prod([p if b else 1 - p for b in bits]) if live else wg
            mask = np.zeros(shape, bool)
            for i, b in zip(live, bits):
                if b:
                    x, y = sites[i][0]
                    mask[x - x0, y - y0] = True
            total += w * bfs_meets(mask, src, snk)
    return total


# -- curves -------------------------------------------------------------------

def boundary_edges(grid):
    """Directed black-on-left edges ``(x, y, dir)`` computed cell by cell (dir 0=E,1=N,2=W,3=S)."""
    grid = np.asarray(grid, dtype=bool)
    m = grid.shape[0]

    def black(i, j):
        return 0 <= i < m and 0 <= j < m and bool(grid[i, j])

    out = set()
    for i in range(m):
        for j in range(m):
            if not grid[i, j]:
                continue
            if not black(i, j - 1):
                out.add((i, j, 0))          # bottom side, heading east
            if not black(i + 1, j):
                out.add((i + 1, j, 1))      # right side, heading north
            if not black(i, j + 1):
                out.add((i + 1, j + 1, 2))  # top side, heading west
            if not black(i - 1, j):
                out.add((i, j + 1, 3))      # left side, heading south
    return out


def coupling_frechet(p, q):
    """Discrete Fréchet distance by depth-first search over all monotone couplings (with pruning)."""
    p = [tuple(map(float, v)) for v in p]
    q = [tuple(map(float, v)) for v in q]
    n, m = len(p), len(q)

    def dist(i, j):
        return ((p[i][0] - q[j][0]) ** 2 + (p[i][1] - q[j][1]) ** 2) ** 0.5

    best = [float("inf")]
    stack = [(0, 0, dist(0, 0))]
    while stack:
        i, j, worst = stack.pop()
        if worst >= best[0]:
            continue
        if i == n - 1 and j == m - 1:
            best[0] = worst
            continue
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            a, b = i + di, j + dj
            if a < n and b < m:
                stack.append((a, b, max(worst, dist(a, b))))
    return best[0]


def _seg_box_meets(a, b, lo, hi):
    """Does the axis-parallel segment ab meet the closed box [lo, hi]^2 (exact)?"""
    for k in range(2):
        s0, s1 = sorted((a[k], b[k]))
        if s1 < lo[k] or s0 > hi[k]:
            return False
    return True


def annulus_arc_oracle(loops, spacing, centre, r, R):
    """Inner-to-outer arcs of each loop, from exact segment geometry along the walk.

    Edges on the unit-square boundary are skipped; they cut a loop into open
    pieces that are read separately.
    """
    h = Fraction(spacing).limit_denominator(10**9)
    m = round(1 / spacing)
    cx, cy = (Fraction(c).limit_denominator(10**9) for c in centre)
    r = Fraction(r).limit_denominator(10**9)
    R = Fraction(R).limit_denominator(10**9)
    ilo, ihi = (cx - r / 2, cy - r / 2), (cx + r / 2, cy + r / 2)

    def far(pt):
        return max(abs(pt[0] - cx), abs(pt[1] - cy)) >= R / 2

    def on_side(a, b):
        return any(a[k] == b[k] and a[k] in (0, m) for k in range(2))

    def count(word, cyclic):
        word = [c for i, c in enumerate(word) if i == 0 or c != word[i - 1]]
        if cyclic:
            if len(word) > 1 and word[0] == word[-1]:
                word.pop()
            return len(word) if len(set(word)) == 2 else 0
        return max(len(word) - 1, 0)

    total = 0
    for verts in loops:
        verts = [(int(x), int(y)) for x, y in verts]
        L = len(verts)
        edges = [(verts[k], verts[(k + 1) % L]) for k in range(L)]
        pts = lambda v: (Fraction(v[0]) * h, Fraction(v[1]) * h)
        cuts = [k for k, (a, b) in enumerate(edges) if on_side(a, b)]
        if not cuts:
            pieces, cyclic = [edges], True
        else:
            pieces, cur = [], []
            for k in range(cuts[0] + 1, cuts[0] + 1 + L):
                a, b = edges[k % L]
                if on_side(a, b):
                    if cur:
                        pieces.append(cur)
                    cur = []
                else:
                    cur.append((a, b))
            if cur:
                pieces.append(cur)
            cyclic = False
        for piece in pieces:
            letters = []
            for a, b in piece:
                pa, pb = pts(a), pts(b)
                if far(pa):
                    letters.append("O")
                if _seg_box_meets(pa, pb, ilo, ihi):
                    letters.append("I")
            if not cyclic and far(pts(piece[-1][1])):
                letters.append("O")
            total += count(letters, cyclic)
    return total


def lowest_crossing_oracle(grid):
    """BFS regions below/above the lowest crossing and its undirected edge set, or None."""
    grid = np.asarray(grid, dtype=bool)
    m = grid.shape[0]
    below = set()
    q = deque()
    for i in range(m):
        if not grid[i, 0]:
            below.add((i, 0))
            q.append((i, 0))
    while q:
        c = q.popleft()
        for nb in _neighbours(c, grid.shape, diagonal=False):
            if not grid[nb] and nb not in below:
                below.add(nb)
                q.append(nb)
    if any((i, m - 1) in below for i in range(m)):
        return None
    above = set()
    for i in range(m):
        if (i, m - 1) not in below:
            above.add((i, m - 1))
            q.append((i, m - 1))
    while q:
        c = q.popleft()
        for nb in _neighbours(c, grid.shape, diagonal=True):
            if nb not in below and nb not in above:
                above.add(nb)
                q.append(nb)
    edges = set()
    for (i, j) in above:
        if j == 0 or (i, j - 1) in below:
            edges.add(frozenset({(i, j), (i + 1, j)}))
        if (i + 1, j) in below:
            edges.add(frozenset({(i + 1, j), (i + 1, j + 1)}))
        if (i - 1, j) in below:
            edges.add(frozenset({(i, j), (i, j + 1)}))
        if (i, j + 1) in below:
            edges.add(frozenset({(i, j + 1), (i + 1, j + 1)}))
    return above, edges


def cell_union_hausdorff_oracle(grid, loops, spacing):
    """Largest distance from a half-lattice point of the retained union to a loop edge."""
    grid = np.asarray(grid, dtype=bool)
    m = grid.shape[0]
    segs = []
    for verts in loops:
        for k in range(len(verts)):
            segs.append((tuple(verts[k]), tuple(verts[(k + 1) % len(verts)])))

    def seg_dist(px, py, a, b):
        # axis-parallel unit segment
        if a[0] == b[0]:
            lo, hi = sorted((a[1], b[1]))
            t = min(max(py, lo), hi)
            return ((px - a[0]) ** 2 + (py - t) ** 2) ** 0.5
        lo, hi = sorted((a[0], b[0]))
        t = min(max(px, lo), hi)
        return ((px - t) ** 2 + (py - a[1]) ** 2) ** 0.5

    best = 0.0
    for i in range(m):
        for j in range(m):
            if not grid[i, j]:
                continue
            for dx in (0, 0.5, 1):
                for dy in (0, 0.5, 1):
                    px, py = i + dx, j + dy
                    best = max(best, min(seg_dist(px, py, a, b) for a, b in segs))
    return best * spacing


def disjoint_paths_oracle(grid, usable, src, snk):
    """Vertex-disjoint source-to-sink paths among black usable cells, via networkx."""
    import networkx as nx

    grid = np.asarray(grid, dtype=bool)
    cells = {tuple(int(v) for v in c) for c in zip(*np.nonzero(grid & usable))}
    g = nx.Graph()
    g.add_nodes_from(["s", "t"])
    for c in cells:
        g.add_node(c)
        for nb in _neighbours(c, grid.shape, diagonal=True):
            if nb in cells:
                g.add_edge(c, nb)
        if src[c]:
            g.add_edge("s", c)
        if snk[c]:
            g.add_edge(c, "t")
    if not g.degree("s") or not g.degree("t"):
        return 0
    # a cell that is both source and sink gives a length-two path s-c-t
    return nx.algorithms.connectivity.local_node_connectivity(g, "s", "t")
