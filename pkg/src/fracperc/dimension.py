"""Box counting on the N-adic grid, dimension fits and the branching-process statistics."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import rng
from .connectivity import ShellSpec, batch_shell_crossing, dust_partition, label_components
from .construction import BatchGenerator, CellIndex, LevelConfiguration, ProcessParams
from .stats import EstimateReport, wilson_interval

# trials per batch are capped so one batch holds about this many cells
_BATCH_CELLS = 4_000_000


@dataclass(frozen=True)
class BoxCountSeries:
    """Counts ``M`` of level-``m`` boxes meeting a target, for several ``m``."""

    scales: np.ndarray
    counts: np.ndarray
    N: int
    d: int
    target: str = "cells"

    def __post_init__(self):
        s = np.asarray(self.scales, dtype=np.int64)
        c = np.asarray(self.counts, dtype=np.int64)
        if s.shape != c.shape:
            raise ValueError("scales and counts differ in length")
        order = np.argsort(s)
        object.__setattr__(self, "scales", s[order])
        object.__setattr__(self, "counts", c[order])

    def rows(self) -> list[dict]:
        return [{"m": int(m), "delta": float(self.N) ** -int(m), "M": int(c)}
                for m, c in zip(self.scales, self.counts)]


@dataclass(frozen=True)
class DimensionFit:
    """Least-squares slope of log M against m log N.

    ``lower``/``upper`` are the smallest and largest slopes over sliding
    three-scale sub-windows of the fit window. ``clamped`` is set when the raw
    slope left ``[0, d]``.
    """

    slope: float
    intercept: float
    window: tuple[int, int]
    residuals: np.ndarray = field(repr=False)
    r_squared: float
    lower: float
    upper: float
    raw_slope: float
    clamped: bool = False

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "window": list(self.window),
                "r_squared": self.r_squared, "lower": self.lower, "upper": self.upper,
                "raw_slope": self.raw_slope, "clamped": self.clamped,
                "residuals": self.residuals.tolist()}


def cells_box_count(coords: np.ndarray, level: int, N: int, m: int) -> int:
    """Number of level-``m`` grid boxes containing at least one of the level-``level`` cells."""
    if m < 1:
        raise ValueError("scale index must be >= 1")
    coords = np.asarray(coords, dtype=np.int64)
    if coords.size == 0:
        return 0
    d = coords.shape[1]
    if m >= level:
        return int(len(coords)) * N ** (d * (m - level))
    boxes = coords // N ** (level - m)
    side = N**m
    if d * math.log2(side) < 62:
        return int(len(np.unique(boxes @ (side ** np.arange(d - 1, -1, -1, dtype=np.int64)))))
    return int(len(np.unique(boxes, axis=0)))


def polyline_box_count(vertices: np.ndarray, N: int, m: int, refine: float = 4.0) -> int:
    """Boxes of side ``N^-m`` visited by a polyline in ``[0,1]^2``.

    Segments are sampled at spacing at most ``delta / refine``; a point is
    assigned to the half-open box that contains it (points on ``x = 1``
    belong to the last box).
    """
    if m < 1:
        raise ValueError("scale index must be >= 1")
    v = np.asarray(vertices, dtype=np.float64)
    if v.size == 0:
        return 0
    side = N**m
    delta = 1.0 / side
    if len(v) == 1:
        pts = v
    else:
        seg = np.diff(v, axis=0)
        length = np.sqrt((seg * seg).sum(axis=1))
        pieces = np.maximum(np.ceil(length * refine / delta).astype(np.int64), 1)
        seg_id = np.repeat(np.arange(len(seg)), pieces)
        start = np.repeat(np.cumsum(pieces) - pieces, pieces)
        t = (np.arange(len(seg_id)) - start) / pieces[seg_id]
        pts = np.concatenate([v[seg_id] + t[:, None] * seg[seg_id], v[-1:]])
    boxes = np.clip(np.floor(pts * side + 1e-9).astype(np.int64), 0, side - 1)
    return int(len(np.unique(boxes, axis=0)))


def box_count(target, m: int, N: Optional[int] = None) -> int:
    """``M_{N^-m}`` of a configuration, or of a curve (``N`` required for curves)."""
    if isinstance(target, LevelConfiguration):
        return cells_box_count(target.coords, target.level, target.N, m)
    if N is None:
        raise ValueError("box counting a curve needs the base N")
    return polyline_box_count(np.asarray(getattr(target, "vertices", target)), N, m)


def box_count_series(target, scales: Sequence[int], N: Optional[int] = None,
                     label: Optional[str] = None) -> BoxCountSeries:
    if isinstance(target, LevelConfiguration):
        N, d, kind = target.N, target.d, "cells"
    else:
        d, kind = 2, "curve"
        if N is None:
            raise ValueError("box counting a curve needs the base N")
    counts = [box_count(target, int(m), N) for m in scales]
    return BoxCountSeries(np.asarray(scales), np.asarray(counts), N, d, label or kind)


def default_window(scales: np.ndarray) -> tuple[int, int]:
    """Drop the two coarsest and the finest scale when at least six are available."""
    s = np.sort(np.asarray(scales))
    if len(s) >= 6:
        return int(s[2]), int(s[-2])
    return int(s[0]), int(s[-1])


def _ls(x, y):
    a = np.vstack([x, np.ones_like(x)]).T
    (slope, icpt), *_ = np.linalg.lstsq(a, y, rcond=None)
    return float(slope), float(icpt)


def fit_box_dimension(series: BoxCountSeries, window: Optional[tuple[int, int]] = None) -> DimensionFit:
    if window is None:
        window = default_window(series.scales)
    lo, hi = window
    sel = (series.scales >= lo) & (series.scales <= hi)
    if sel.sum() < 3:
        raise ValueError(f"need at least 3 scales in the fit window, got {int(sel.sum())}")
    counts = series.counts[sel]
    if np.any(counts <= 0):
        raise ValueError("box counts must be positive inside the fit window")
    x = series.scales[sel] * math.log(series.N)
    y = np.log(counts.astype(np.float64))
    raw, icpt = _ls(x, y)
    resid = y - (raw * x + icpt)
    ss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss if ss > 0 else 1.0
    subs = [_ls(x[i:i + 3], y[i:i + 3])[0] for i in range(len(x) - 2)]
    d = series.d
    slope = min(max(raw, 0.0), float(d))
    clamped = slope != raw
    if clamped:
        warnings.warn(f"fitted slope {raw:.4f} outside [0, {d}], clamped", RuntimeWarning)
    clip = lambda v: min(max(v, 0.0), float(d))
    return DimensionFit(slope, icpt, (int(lo), int(hi)), resid, r2, clip(min(subs)), clip(max(subs)),
                        raw, clamped)


def config_box_dimension(config: LevelConfiguration, window=None) -> DimensionFit:
    return fit_box_dimension(box_count_series(config, range(1, config.level + 1)), window)


def theoretical_dimension(params: ProcessParams) -> float:
    """d + log p / log N; negative values are returned as is, with a warning."""
    if params.p <= 0:
        raise ValueError("the dimension formula needs p > 0")
    value = params.d + math.log(params.p) / math.log(params.N)
    if value < 0:
        warnings.warn("p N^d < 1: the process dies out almost surely", RuntimeWarning)
    return value


def _trial_chunks(params: ProcessParams, n: int, trials: int, start_seed: int):
    per = max(1.0, (params.p * params.N**params.d) ** n)
    size = int(max(1, min(trials, _BATCH_CELLS // per)))
    for lo in range(0, trials, size):
        yield rng.trial_seeds(start_seed, min(size, trials - lo), start=lo)


def z_counts(params: ProcessParams, n: int, trials: int) -> np.ndarray:
    """``(trials, n)`` matrix of Z_1..Z_n for trials derived from ``params.seed``."""
    gen = BatchGenerator(params.N, params.d, params.p)
    return np.concatenate([gen.counts(s, n) for s in _trial_chunks(params, n, trials, params.seed)])


def zn_statistics(params: ProcessParams, n: int, trials: int, level: float = 0.95) -> EstimateReport:
    """Mean of Z_n against (p N^d)^n, plus the law of Z_n^(1/n) on survival."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    z = z_counts(params, n, trials)[:, -1].astype(np.float64)
    mean = params.p * params.N**params.d
    alive = z[z > 0]
    root = alive ** (1.0 / n)
    meta = {
        **params.to_dict(), "n": n, "expected_mean": mean**n,
        "se": float(z.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0,
        "variance": float(z.var(ddof=1)) if trials > 1 else 0.0,
        "survival_fraction": float(len(alive) / trials),
        "root_target": mean,
        "root_median": float(np.median(root)) if len(alive) else float("nan"),
        "root_quantiles": {q: float(np.quantile(root, q)) for q in (0.1, 0.25, 0.75, 0.9)}
        if len(alive) else {},
    }
    return EstimateReport.mean("Z_n", z, params.seed, level, meta)


def phi_shell(N: int, d: int, generalized: bool = False) -> ShellSpec:
    """Level-1 shell around the centre cell; the cube-centred variant is opt-in."""
    if N % 2 == 1 and N >= 5:
        return ShellSpec.around(CellIndex(1, ((N + 1) // 2,) * d), N)
    if generalized:
        return ShellSpec.cube_centred(N, d)
    raise ValueError(f"N={N}: the centre-cell shell needs odd N >= 5 "
                     "(pass generalized=True for the cube-centred variant)")


def estimate_phi(params: ProcessParams, n: int, trials: int, level: float = 0.95,
                 generalized: bool = False) -> EstimateReport:
    """Frequency of a level-``n`` crossing of the level-1 centre shell (an upper approximation of phi)."""
    if n < 2:
        raise ValueError("phi needs resolution n >= 2")
    shell = phi_shell(params.N, params.d, generalized)
    gen = BatchGenerator(params.N, params.d, params.p)
    hits = 0
    side_cells = float(params.N) ** (params.d * n)
    size = int(max(1, min(trials, 2 * _BATCH_CELLS // side_cells)))
    for lo in range(0, trials, size):
        seeds = rng.trial_seeds(params.seed, min(size, trials - lo), start=lo)
        hits += int(batch_shell_crossing(gen.dense(seeds, n), shell).sum())
    meta = {**params.to_dict(), "n": n, "shell_centre": "cell" if shell.center else "cube"}
    return EstimateReport.proportion("phi", hits, trials, params.seed, level, meta)


def hausdorff_upper_bound(params: ProcessParams, phi: float) -> float:
    """d + log(p phi) / log N."""
    if not 0 < phi <= 1:
        raise ValueError("phi must lie in (0, 1]")
    if params.p <= 0:
        raise ValueError("p must be positive")
    return params.d + (math.log(params.p) + math.log1p(phi - 1.0)) / math.log(params.N)


def bound_ratio(params: ProcessParams, phi: float) -> float:
    """Empirical constant D = bound / (d + log p / log N)."""
    return hausdorff_upper_bound(params, phi) / theoretical_dimension(params)


def discontinuity_bound_check(phi: float, delta: float, params: ProcessParams) -> tuple[bool, dict]:
    """Does phi >= N^-(d - delta) hold? Both inputs are estimates, so this is a diagnostic."""
    if not 1 <= delta <= params.d:
        raise ValueError(f"delta must lie in [1, {params.d}]")
    threshold = float(params.N) ** (-(params.d - delta))
    ok = phi >= threshold
    return ok, {"phi": phi, "delta": delta, "threshold": threshold, "margin": phi - threshold,
                "holds": ok}


def connected_cells_dimension(config: LevelConfiguration, eps: float, window=None) -> Optional[DimensionFit]:
    """Box-dimension fit of the cells in components of diameter >= eps (None if there are none)."""
    big, _ = dust_partition(label_components(config), eps)
    if len(big) == 0:
        return None
    sub = config.with_coords(big)
    return config_box_dimension(sub, window)
