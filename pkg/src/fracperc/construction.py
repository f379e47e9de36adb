"""Seed-reproducible generation of the nested retained-cell sets C^1 ⊃ C^2 ⊃ ...

Cells are addressed by 1-based index vectors in :class:`CellIndex` (cell
``k`` at level ``n`` covers ``[(k-1)/N^n, k/N^n]`` on each axis). Arrays held
by :class:`LevelConfiguration` are 0-based, i.e. ``coords == k - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Optional, Sequence

import numpy as np

from . import rng

DEFAULT_MEMORY_BUDGET = 2 * 1024**3


class ResourceBudgetError(MemoryError):
    """Raised instead of attempting an allocation above the memory budget."""


@dataclass(frozen=True)
class ProcessParams:
    """The full law of the process: subdivision factor, dimension, retention, seed."""

    N: int
    d: int
    p: float
    seed: int = 0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise ValueError(f"N must be an integer >= 2, got {self.N!r}")
        if int(self.d) != self.d or self.d < 2:
            raise ValueError(f"d must be an integer >= 2, got {self.d!r}")
        if not (0.0 <= float(self.p) <= 1.0):
            raise ValueError(f"p must lie in [0, 1], got {self.p!r}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "seed", rng.canonical_seed(self.seed))

    def with_p(self, p: float) -> "ProcessParams":
        return ProcessParams(self.N, self.d, p, self.seed)

    def with_seed(self, seed: int) -> "ProcessParams":
        return ProcessParams(self.N, self.d, self.p, seed)

    def to_dict(self) -> dict:
        return {"N": self.N, "d": self.d, "p": self.p, "seed": self.seed}


@dataclass(frozen=True)
class CellIndex:
    """Level-``level`` cell with 1-based coordinates ``k`` (each in [1, N^level])."""

    level: int
    k: tuple

    def __post_init__(self):
        if self.level < 1:
            raise ValueError("cell level must be >= 1")
        object.__setattr__(self, "k", tuple(int(v) for v in self.k))
        if any(v < 1 for v in self.k):
            raise ValueError(f"cell coordinates are 1-based, got {self.k}")

    @classmethod
    def from_zero_based(cls, level: int, coords) -> "CellIndex":
        return cls(level, tuple(int(c) + 1 for c in coords))

    @property
    def d(self) -> int:
        return len(self.k)

    @property
    def zero_based(self) -> np.ndarray:
        return np.asarray(self.k, dtype=np.int64) - 1

    def validate(self, N: int, d: Optional[int] = None) -> None:
        if d is not None and len(self.k) != d:
            raise ValueError(f"cell has {len(self.k)} coordinates, expected {d}")
        side = N**self.level
        if any(v > side for v in self.k):
            raise ValueError(f"cell {self.k} out of range for level {self.level} (N={N})")

    def ancestor(self, m: int, N: int) -> "CellIndex":
        """The level-``m`` cell containing this one (``m <= level``)."""
        if not 1 <= m <= self.level:
            raise ValueError(f"ancestor level {m} outside [1, {self.level}]")
        q = N ** (self.level - m)
        return CellIndex.from_zero_based(m, self.zero_based // q)

    def children(self, N: int) -> list["CellIndex"]:
        base = self.zero_based * N
        return [CellIndex.from_zero_based(self.level + 1, base + off)
                for off in rng.child_offsets(N, self.d)]


def cell_box(cell: CellIndex, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Corner coordinates ``(lo, hi)`` of the closed box of ``cell``."""
    k = np.asarray(cell.k, dtype=np.float64)
    side = float(N) ** cell.level
    return (k - 1.0) / side, k / side


def retain_decision(params: ProcessParams, cell: CellIndex) -> bool:
    """Own Bernoulli decision omega(cell): True iff U(cell) < p."""
    cell.validate(params.N, params.d)
    u = rng.cell_uniforms(params.seed, cell.level, cell.zero_based[None, :])[0]
    return bool(u < params.p)


def _lex_order(coords: np.ndarray, lead: Optional[np.ndarray] = None) -> np.ndarray:
    keys = [coords[:, a] for a in range(coords.shape[1] - 1, -1, -1)]
    if lead is not None:
        keys.append(lead)
    return np.lexsort(keys)


def estimated_bytes(N: int, d: int, p: float, n: int) -> float:
    """Working-memory estimate for one level-``n`` configuration."""
    if d == 2:
        return float(N) ** (d * n)
    expected = (p * N**d) ** n
    return 16.0 * d * expected


def check_budget(N: int, d: int, p: float, n: int, budget: Optional[float]) -> None:
    if budget is None:
        return
    need = estimated_bytes(N, d, p, n)
    if need > budget:
        raise ResourceBudgetError(
            f"level {n} with N={N}, d={d} needs ~{need:.3g} bytes, budget is {budget:.3g}")


@dataclass(frozen=True, eq=False)
class LevelConfiguration:
    """Retained level-``level`` cells of one realization.

    ``coords`` is a read-only ``(Z, d)`` int64 array of 0-based indices in
    lexicographic order. ``full_until`` records levels that were forced
    retained (0 for the genuine process).
    """

    params: ProcessParams
    level: int
    coords: np.ndarray
    full_until: int = 0
    root: Optional[CellIndex] = None
    _grid: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        c = np.ascontiguousarray(self.coords, dtype=np.int64).reshape(-1, self.params.d)
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)
        if self._grid is not None:
            self._grid.setflags(write=False)

    @classmethod
    def from_grid(cls, params: ProcessParams, level: int, grid: np.ndarray, **kw) -> "LevelConfiguration":
        """Build from a dense boolean array of shape ``(N^level,) * d``."""
        grid = np.asarray(grid, dtype=bool)
        side = params.N**level
        if grid.shape != (side,) * params.d:
            raise ValueError(f"grid shape {grid.shape} does not match level {level}")
        coords = np.argwhere(grid).astype(np.int64)
        return cls(params, level, coords, _grid=grid.copy(), **kw)

    @classmethod
    def from_cells(cls, params: ProcessParams, level: int, cells: Sequence, **kw) -> "LevelConfiguration":
        """Build from CellIndex objects or 1-based index tuples."""
        rows = []
        for c in cells:
            k = c.k if isinstance(c, CellIndex) else tuple(c)
            rows.append([v - 1 for v in k])
        coords = np.array(rows, dtype=np.int64).reshape(-1, params.d)
        side = params.N**level
        if coords.size and (coords.min() < 0 or coords.max() >= side):
            raise ValueError("cell outside the level grid")
        coords = np.unique(coords, axis=0)
        return cls(params, level, coords[_lex_order(coords)], **kw)

    @property
    def N(self) -> int:
        return self.params.N

    @property
    def d(self) -> int:
        return self.params.d

    @property
    def side(self) -> int:
        """Number of cells per axis, N^level."""
        return self.params.N**self.level

    @property
    def spacing(self) -> float:
        return float(self.params.N) ** (-self.level)

    @property
    def z_n(self) -> int:
        return int(self.coords.shape[0])

    def __len__(self) -> int:
        return self.z_n

    @property
    def is_empty(self) -> bool:
        return self.z_n == 0

    @cached_property
    def grid(self) -> np.ndarray:
        """Dense read-only boolean grid indexed by 0-based coordinates."""
        if self._grid is not None:
            return self._grid
        if self.side**self.d > DEFAULT_MEMORY_BUDGET:
            raise ResourceBudgetError(
                f"dense grid of {self.side}^{self.d} cells exceeds the memory budget")
        g = np.zeros((self.side,) * self.d, dtype=bool)
        if self.z_n:
            g[tuple(self.coords.T)] = True
        g.setflags(write=False)
        return g

    def contains(self, cell: CellIndex) -> bool:
        if cell.level != self.level:
            raise ValueError("cell level differs from configuration level")
        idx = cell.zero_based
        if np.any(idx >= self.side):
            return False
        if self.d == 2 or self._grid is not None:
            return bool(self.grid[tuple(idx)])
        return bool(np.any(np.all(self.coords == idx, axis=1)))

    def cells(self) -> Iterator[CellIndex]:
        for row in self.coords:
            yield CellIndex.from_zero_based(self.level, row)

    def with_coords(self, coords: np.ndarray) -> "LevelConfiguration":
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, self.d)
        return LevelConfiguration(self.params, self.level, coords[_lex_order(coords)],
                                  full_until=self.full_until, root=self.root)

    def coarsen(self, m: int) -> np.ndarray:
        """Distinct level-``m`` ancestors (0-based) of the retained cells."""
        if not 1 <= m <= self.level:
            raise ValueError(f"scale {m} outside [1, {self.level}]")
        if self.z_n == 0:
            return np.empty((0, self.d), dtype=np.int64)
        q = self.N ** (self.level - m)
        return np.unique(self.coords // q, axis=0)

    def header(self) -> dict:
        h = {**self.params.to_dict(), "level": self.level, "z_n": self.z_n}
        if self.full_until:
            h["full_until"] = self.full_until
        if self.root is not None:
            h["root"] = {"level": self.root.level, "k": list(self.root.k)}
        return h


class FractalProcess:
    """Handle on the process, or on the rescaled subprocess inside ``root``.

    Level ``m`` of a view rooted at the level-``r`` cell ``root`` is made of
    the parent's level-``r+m`` decisions inside ``root``, re-indexed to
    ``[0, 1]^d``; the view conditions on nothing (ancestors of ``root`` are
    ignored).
    """

    def __init__(self, params: ProcessParams, root: Optional[CellIndex] = None,
                 memory_budget: Optional[float] = DEFAULT_MEMORY_BUDGET):
        self.params = params
        if root is not None:
            root.validate(params.N, params.d)
        self.root = root
        self.memory_budget = memory_budget
        self._offsets = rng.child_offsets(params.N, params.d)

    @property
    def _base_level(self) -> int:
        return 0 if self.root is None else self.root.level

    def _start(self) -> np.ndarray:
        if self.root is None:
            return np.zeros((1, self.params.d), dtype=np.int64)
        return self.root.zero_based[None, :].copy()

    def uniforms(self, level: int, coords: np.ndarray) -> np.ndarray:
        """U for 0-based cells of this (possibly rescaled) process."""
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, self.params.d)
        if self.root is not None:
            coords = coords + self.root.zero_based * self.params.N**level
        return rng.cell_uniforms(self.params.seed, self._base_level + level, coords)

    def retain_decision(self, cell: CellIndex) -> bool:
        cell.validate(self.params.N, self.params.d)
        return bool(self.uniforms(cell.level, cell.zero_based)[0] < self.params.p)

    def _descend(self, seeds, trial, coords, start_level, stop_level, full_until):
        N, p = self.params.N, self.params.p
        for m in range(start_level + 1, stop_level + 1):
            pp = 1.0 if m <= full_until else p
            kids, parent = rng.expand_children(seeds[trial], coords, self._base_level + m, N, pp,
                                               self._offsets)
            coords, trial = kids, trial[parent]
            yield m, trial, coords

    def _configuration(self, level, coords, full_until):
        if self.root is not None:
            coords = coords - self.root.zero_based * self.params.N**level
        order = _lex_order(coords)
        return LevelConfiguration(self.params, level, coords[order], full_until=full_until,
                                  root=self.root)

    def generate_levels(self, n: int, full_until: int = 0) -> list[LevelConfiguration]:
        """Configurations of levels 1..n of one realization, sharing the work."""
        if n < 1:
            raise ValueError("level must be >= 1")
        check_budget(self.params.N, self.params.d, self.params.p, n, self.memory_budget)
        seeds = np.array([self.params.seed], dtype=np.uint64)
        out = []
        for m, _, coords in self._descend(seeds, np.zeros(1, np.int64), self._start(), 0, n, full_until):
            out.append(self._configuration(m, coords, full_until))
        return out

    def generate_level(self, n: int, full_until: int = 0) -> LevelConfiguration:
        if n < 1:
            raise ValueError("level must be >= 1")
        check_budget(self.params.N, self.params.d, self.params.p, n, self.memory_budget)
        seeds = np.array([self.params.seed], dtype=np.uint64)
        coords = self._start()
        trial = np.zeros(1, np.int64)
        for _, trial, coords in self._descend(seeds, trial, coords, 0, n, full_until):
            pass
        return self._configuration(n, coords, full_until)


def generate_level(params: ProcessParams, n: int, *, full_until: int = 0,
                   memory_budget: Optional[float] = DEFAULT_MEMORY_BUDGET) -> LevelConfiguration:
    """Retained level-``n`` cells: those whose whole ancestor chain passes.

    Ancestors are evaluated top-down, so a cell is never hashed once one of
    its ancestors died. Levels ``<= full_until`` are forced retained.
    """
    return FractalProcess(params, memory_budget=memory_budget).generate_level(n, full_until)


def generate_levels(params: ProcessParams, n: int, *, full_until: int = 0,
                    memory_budget: Optional[float] = DEFAULT_MEMORY_BUDGET) -> list[LevelConfiguration]:
    return FractalProcess(params, memory_budget=memory_budget).generate_levels(n, full_until)


def subprocess_view(params: ProcessParams, root: CellIndex) -> FractalProcess:
    """The rescaled process living inside ``root`` (retention of ``root`` not required)."""
    return FractalProcess(params, root=root)


class BatchGenerator:
    """Many independent realizations at once, one seed per trial.

    Used by the Monte Carlo layer when per-trial Python overhead would
    dominate (small levels, many trials).
    """

    def __init__(self, N: int, d: int, p: float, full_until: int = 0):
        self.N, self.d, self.p = int(N), int(d), float(p)
        self.full_until = full_until
        self._offsets = rng.child_offsets(self.N, self.d)

    def descend(self, seeds: np.ndarray, n: int):
        """Yield ``(level, trial_index, coords)`` for levels 1..n."""
        seeds = np.ascontiguousarray(seeds, dtype=np.uint64)
        trial = np.arange(seeds.shape[0], dtype=np.int64)
        coords = np.zeros((seeds.shape[0], self.d), dtype=np.int64)
        for m in range(1, n + 1):
            pp = 1.0 if m <= self.full_until else self.p
            kids, parent = rng.expand_children(seeds[trial], coords, m, self.N, pp, self._offsets)
            coords, trial = kids, trial[parent]
            yield m, trial, coords

    def counts(self, seeds: np.ndarray, n: int) -> np.ndarray:
        """``Z`` per trial and level, shape ``(trials, n)``."""
        out = np.zeros((len(seeds), n), dtype=np.int64)
        for m, trial, _ in self.descend(seeds, n):
            out[:, m - 1] = np.bincount(trial, minlength=len(seeds))
        return out

    def dense(self, seeds: np.ndarray, n: int) -> np.ndarray:
        """Stack of dense grids, shape ``(trials,) + (N^n,) * d``."""
        side = self.N**n
        out = np.zeros((len(seeds),) + (side,) * self.d, dtype=bool)
        for m, trial, coords in self.descend(seeds, n):
            if m == n:
                out[(trial,) + tuple(coords.T)] = True
        return out
