"""Trial orchestration: crossing probabilities, annulus tails, r^n_{eps,k} and the H2 experiment.

Trial ``t`` of a plan always uses ``rng.trial_seed(seed, t)``, and the same
seed is reused across every ``p`` and ``n`` of the plan. Retention is
``U < p`` on shared uniforms, so samples are monotonically coupled in
``p`` and nested in ``n``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import __version__, rng
from .connectivity import batch_left_right_crossing, rectangle_crossing
from .construction import BatchGenerator, LevelConfiguration, ProcessParams, generate_level, generate_levels
from .curves import (
    AnnulusSpec,
    InterfaceSet,
    annulus_interface_crossings,
    rectangle_interface_crossing,
    trace_interfaces,
)
from .stats import EstimateReport, z_value

ESTIMATORS = ("theta", "phi", "zn", "dimension", "tail", "r_eps", "h2")
_BATCH_CELLS = 4_000_000


@dataclass(frozen=True)
class ExperimentPlan:
    """A grid of (p, n) points, a trial count, a master seed and the estimators to run.

    ``options`` holds per-estimator settings keyed by estimator name.
    """

    N: int
    d: int
    p_grid: tuple
    n_grid: tuple
    trials: int
    seed: int = 0
    estimators: tuple = ("theta",)
    output_dir: Optional[str] = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "p_grid", tuple(float(p) for p in self.p_grid))
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.p_grid or not self.n_grid:
            raise ValueError("p_grid and n_grid must be non-empty")
        for p in self.p_grid:
            ProcessParams(self.N, self.d, p)
        if any(n < 1 for n in self.n_grid):
            raise ValueError("levels must be >= 1")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ValueError(f"unknown estimators {sorted(unknown)}; choose from {list(ESTIMATORS)}")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentPlan":
        allowed = {"N", "d", "p_grid", "n_grid", "trials", "seed", "estimators", "output_dir", "options"}
        extra = set(data) - allowed
        if extra:
            raise ValueError(f"unknown plan keys {sorted(extra)}")
        missing = {"N", "d", "p_grid", "n_grid", "trials"} - set(data)
        if missing:
            raise ValueError(f"plan is missing {sorted(missing)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path: str) -> "ExperimentPlan":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["p_grid"], out["n_grid"], out["estimators"] = list(self.p_grid), list(self.n_grid), list(self.estimators)
        return out

    def seeds(self, start: int = 0, count: Optional[int] = None) -> np.ndarray:
        s = rng.trial_seeds(self.seed, self.trials if count is None else count, start=start)
        if len(np.unique(s)) != len(s):
            raise ValueError("trial seeds collide")  # would need a 64-bit hash collision
        return s

    def params(self, p: float, seed: int = 0) -> ProcessParams:
        return ProcessParams(self.N, self.d, p, int(seed))


# -- theta -------------------------------------------------------------------

def _dense_chunks(N: int, d: int, p: float, n: int, seeds: np.ndarray):
    gen = BatchGenerator(N, d, p)
    size = int(max(1, min(len(seeds), 2 * _BATCH_CELLS // float(N) ** (d * n))))
    for lo in range(0, len(seeds), size):
        yield gen.dense(seeds[lo:lo + size], n)


def theta_samples(plan: ExperimentPlan) -> np.ndarray:
    """Boolean ``(len(p_grid), len(n_grid), trials)`` array of left-right crossings."""
    seeds = plan.seeds()
    out = np.zeros((len(plan.p_grid), len(plan.n_grid), plan.trials), dtype=bool)
    for i, p in enumerate(plan.p_grid):
        for j, n in enumerate(plan.n_grid):
            parts = [batch_left_right_crossing(g) for g in _dense_chunks(plan.N, plan.d, p, n, seeds)]
            out[i, j] = np.concatenate(parts)
    return out


def estimate_theta(plan: ExperimentPlan, level: float = 0.95) -> list[EstimateReport]:
    """theta^(n)(p) for every grid point, with Wilson intervals."""
    hits = theta_samples(plan)
    reports = []
    for i, p in enumerate(plan.p_grid):
        for j, n in enumerate(plan.n_grid):
            meta = {**plan.params(p, plan.seed).to_dict(), "n": n, "version": __version__}
            reports.append(EstimateReport.proportion("theta", int(hits[i, j].sum()), plan.trials,
                                                     plan.seed, level, meta))
    return reports


# -- disjoint annulus crossings -----------------------------------------------

QUADRANT_CENTRES = ((0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75))


@dataclass(frozen=True)
class AnnulusFamily:
    """Annuli ``A(x; R 2^-j, R)`` for every centre and every ``j``."""

    centres: tuple = QUADRANT_CENTRES
    R: float = 0.5
    js: tuple = (1, 2, 3, 4, 5, 6)

    def __post_init__(self):
        object.__setattr__(self, "centres", tuple(tuple(float(v) for v in c) for c in self.centres))
        object.__setattr__(self, "js", tuple(int(j) for j in self.js))
        if not self.js or min(self.js) < 1:
            raise ValueError("need ratio exponents j >= 1")
        for c in self.centres:
            AnnulusSpec(c, self.R * 2.0 ** -max(self.js), self.R)

    def ratios(self) -> np.ndarray:
        return 2.0 ** -np.asarray(self.js, dtype=np.float64)

    def annulus(self, c: int, j: int) -> AnnulusSpec:
        return AnnulusSpec(self.centres[c], self.R * 2.0 ** -self.js[j], self.R)


def annulus_counts(F: InterfaceSet, family: AnnulusFamily) -> np.ndarray:
    """Interface crossing counts, shape ``(centres, js)``."""
    out = np.zeros((len(family.centres), len(family.js)), dtype=np.int64)
    for c in range(len(family.centres)):
        for j in range(len(family.js)):
            out[c, j] = annulus_interface_crossings(F, family.annulus(c, j))
    return out


@dataclass
class TailReport:
    """P(>= k crossings) per (k, r/R), fitted slopes and their ordering."""

    params: dict
    n: int
    trials: int
    ks: tuple
    ratios: np.ndarray
    probabilities: np.ndarray      # (ks, js)
    reports: list                  # EstimateReport per (k, j), row-major
    slopes: np.ndarray
    slope_se: np.ndarray
    reliable: np.ndarray
    ordering: list                 # one dict per consecutive pair of ks
    counts: np.ndarray = field(repr=False, default=None)

    @property
    def non_decreasing(self) -> bool:
        return all(o["consistent"] for o in self.ordering)

    def rows(self) -> list[dict]:
        out = []
        for a, k in enumerate(self.ks):
            for b, ratio in enumerate(self.ratios):
                r = self.reports[a * len(self.ratios) + b]
                out.append({**self.params, "n": self.n, "k": k, "r_over_R": float(ratio),
                            "trials": self.trials, "hits": r.metadata["successes"],
                            "probability": r.estimate, "ci_low": r.ci_low, "ci_high": r.ci_high,
                            "lambda_hat": float(self.slopes[a]), "lambda_se": float(self.slope_se[a]),
                            "reliable": bool(self.reliable[a]), "version": __version__})
        return out


def _tail_slopes(hit: np.ndarray, x: np.ndarray, min_hits: int):
    """Slope of log P against x per k; ``hit`` is (trials, centres, ks, js) boolean."""
    succ = hit.sum(axis=(0, 1))
    total = hit.shape[0] * hit.shape[1]
    slopes = np.full(succ.shape[0], np.nan)
    used = []
    for a in range(succ.shape[0]):
        sel = succ[a] >= min_hits
        used.append(sel)
        if sel.sum() >= 2:
            slopes[a] = np.polyfit(x[sel], np.log(succ[a, sel] / total), 1)[0]
    return slopes, used


def estimate_disjoint_crossing_tail(params: ProcessParams, n: int, trials: int,
                                    family: AnnulusFamily = AnnulusFamily(),
                                    ks: Sequence[int] = (1, 2, 3), level: float = 0.95,
                                    bootstrap: int = 400, min_hits: int = 5) -> TailReport:
    """Empirical P(F_n has >= k disjoint crossings of A(x; r, R)) and slopes lambda_hat(k).

    Centres are pooled. lambda_hat is the least-squares slope of log P against
    log(r/R) over ratios with at least ``min_hits`` successes; fewer than two
    such ratios flags the slope unreliable. Standard errors come from a
    bootstrap over trials, paired across ``k``, and consecutive slopes count
    as ordered unless the difference is below ``-z * SE`` (one-sided).
    """
    if params.d != 2:
        raise ValueError("annulus crossings need d = 2")
    ks = tuple(int(k) for k in ks)
    counts = np.zeros((trials, len(family.centres), len(family.js)), dtype=np.int64)
    for t, s in enumerate(rng.trial_seeds(params.seed, trials)):
        cfg = generate_level(params.with_seed(int(s)), n)
        counts[t] = annulus_counts(trace_interfaces(cfg), family)
    hit = counts[:, :, None, :] >= np.asarray(ks)[None, None, :, None]
    x = np.log(family.ratios())
    slopes, used = _tail_slopes(hit, x, min_hits)
    pooled = trials * len(family.centres)
    reports = []
    probs = np.zeros((len(ks), len(family.js)))
    for a, k in enumerate(ks):
        for b, j in enumerate(family.js):
            sx = int(hit[:, :, a, b].sum())
            probs[a, b] = sx / pooled
            reports.append(EstimateReport.proportion(
                f"P(crossings>={k})", sx, pooled, params.seed, level,
                {**params.to_dict(), "n": n, "k": k, "r_over_R": float(2.0 ** -j), "R": family.R}))
    boot = rng_bootstrap(hit, x, used, bootstrap, params.seed)
    se = np.nanstd(boot, axis=0, ddof=1) if len(boot) > 1 else np.full(len(ks), np.nan)
    reliable = ~np.isnan(slopes)
    z = z_value(1 - 2 * (1 - level))  # one-sided
    ordering = []
    for a in range(len(ks) - 1):
        diff = slopes[a + 1] - slopes[a]
        if reliable[a] and reliable[a + 1]:
            d_se = float(np.nanstd(boot[:, a + 1] - boot[:, a], ddof=1)) if len(boot) > 1 else 0.0
            ok = bool(diff >= -z * d_se)
        else:
            d_se, ok = float("nan"), True
        ordering.append({"k": ks[a], "k_next": ks[a + 1], "difference": float(diff), "se": d_se,
                         "threshold": -z * d_se, "consistent": ok,
                         "reliable": bool(reliable[a] and reliable[a + 1])})
    return TailReport({**params.to_dict()}, n, trials, ks, family.ratios(), probs, reports,
                      slopes, se, reliable, ordering, counts)


def rng_bootstrap(hit: np.ndarray, x: np.ndarray, used: list, reps: int, seed: int) -> np.ndarray:
    """Bootstrap slopes (reps, ks) resampling trials; ratio sets stay fixed to the point estimate's."""
    if reps < 2:
        return np.zeros((0, hit.shape[2]))
    gen = np.random.default_rng(rng.trial_seed(seed, 0x7A11))
    per_trial = hit.sum(axis=1)  # (trials, ks, js)
    trials = hit.shape[0]
    total = trials * hit.shape[1]
    out = np.full((reps, hit.shape[2]), np.nan)
    for b in range(reps):
        succ = per_trial[gen.integers(0, trials, trials)].sum(axis=0)
        for a, sel in enumerate(used):
            if sel.sum() >= 2 and np.all(succ[a, sel] > 0):
                out[b, a] = np.polyfit(x[sel], np.log(succ[a, sel] / total), 1)[0]
    return out


# -- r^n_{eps,k} ----------------------------------------------------------------

def centre_grid(N: int, n: int) -> np.ndarray:
    """Centres on the N^-ceil(n/2) grid of [0,1]^2."""
    m = N ** math.ceil(n / 2)
    g = np.arange(m + 1) / m
    return np.array([(x, y) for x in g for y in g])


def radius_grid(N: int, n: int, eps: float, step: float = 2 ** -0.5) -> np.ndarray:
    """Decreasing log grid of r in (0, 1) with r^(1+eps) at least the grid spacing.

    r = 1 is left out: there the annulus degenerates to a square boundary.
    """
    h = float(N) ** -n
    r_min = h ** (1 / (1 + eps))
    count = int(math.floor(math.log(r_min) / math.log(step) + 1e-9))
    return step ** np.arange(1, count + 1)


def _subset(F: InterfaceSet, loops: np.ndarray) -> InterfaceSet:
    starts, ends = F.offsets[loops], F.offsets[loops + 1]
    idx = np.concatenate([np.arange(s, e) for s, e in zip(starts, ends)]) if len(loops) else np.zeros(0, np.int64)
    return InterfaceSet(F.level, F.N, F.vertices[idx], np.concatenate([[0], np.cumsum(ends - starts)]))


def max_annulus_crossings(F: InterfaceSet, centre, r_in: float, r_out: float) -> int:
    """Crossings of A(centre; r_in, r_out), counting only loops whose bounding box can cross."""
    if F.n_loops == 0:
        return 0
    lo, hi = (b * F.spacing for b in F.bboxes())
    c = np.asarray(centre, dtype=np.float64)
    # box meets the closed inner square and leaves the open outer one
    meets_inner = np.all((hi >= c - r_in / 2 - 1e-12) & (lo <= c + r_in / 2 + 1e-12), axis=1)
    leaves = np.any((lo <= c - r_out / 2 + 1e-12) | (hi >= c + r_out / 2 - 1e-12), axis=1)
    cand = np.flatnonzero(meets_inner & leaves)
    if len(cand) == 0:
        return 0
    return annulus_interface_crossings(_subset(F, cand), AnnulusSpec(tuple(c), r_in, r_out))


def r_epsilon_k(F: InterfaceSet, eps: float, k: int, centres: Optional[np.ndarray] = None,
                radii: Optional[np.ndarray] = None) -> float:
    """Grid infimum of r such that some A(x; r^(1+eps), r) has >= k interface crossings (1 if none)."""
    if eps <= 0 or k < 1:
        raise ValueError("need eps > 0 and k >= 1")
    if centres is None:
        centres = centre_grid(F.N, F.level)
    if radii is None:
        radii = radius_grid(F.N, F.level, eps)
    if F.n_loops == 0:
        return 1.0
    lo, hi = F.bboxes()
    extent = (hi - lo).max(axis=1) * F.spacing
    for r in sorted(radii):
        r_in = r ** (1 + eps)
        # a crossing arc spans at least (r - r_in) / 2 in some coordinate
        big = np.flatnonzero(extent >= (r - r_in) / 2 - 1e-12)
        if len(big) == 0:
            continue
        sub = _subset(F, big)
        if any(max_annulus_crossings(sub, c, r_in, r) >= k for c in centres):
            return float(r)
    return 1.0


@dataclass
class RDistribution:
    params: dict
    eps: float
    k: int
    values: dict            # n -> array of per-trial r^n
    quantiles: dict         # n -> {q: value}

    def rows(self) -> list[dict]:
        out = []
        for n, vals in self.values.items():
            for t, v in enumerate(vals):
                out.append({**self.params, "n": n, "eps": self.eps, "k": self.k, "trial": t,
                            "r": float(v), "version": __version__})
        return out


def sample_r_epsilon_k(params: ProcessParams, n_grid: Sequence[int], trials: int, eps: float, k: int,
                       quantiles: Sequence[float] = (0.05, 0.1, 0.25, 0.5)) -> RDistribution:
    """Per-trial grid infimum r^n_{eps,k}, for each level on nested realizations."""
    if params.d != 2:
        raise ValueError("r^n_{eps,k} needs d = 2")
    values = {int(n): np.ones(trials) for n in n_grid}
    top = max(values)
    for t, s in enumerate(rng.trial_seeds(params.seed, trials)):
        levels = generate_levels(params.with_seed(int(s)), top)
        for n in values:
            values[n][t] = r_epsilon_k(trace_interfaces(levels[n - 1]), eps, k)
    qs = {n: {float(q): float(np.quantile(v, q)) for q in quantiles} for n, v in values.items()}
    return RDistribution(params.to_dict(), eps, k, values, qs)


# -- Hypothesis H2 ------------------------------------------------------------------

def _rect_distance(a, b) -> float:
    gaps = [max(0.0, b[k][0] - a[k][1], a[k][0] - b[k][1]) for k in range(2)]
    return math.hypot(*gaps)


def _rect_diameter(a) -> float:
    return math.hypot(a[0][1] - a[0][0], a[1][1] - a[1][0])


@dataclass(frozen=True)
class RectangleFamily:
    """k rectangles of width l_i and length sigma l_i, with the well-separation certificate.

    ``axes[i]`` is the 1-based long direction of rectangle ``i``.
    ``certificate[i]`` is ``(distance to the others, diameter)``.
    """

    rects: tuple
    axes: tuple
    sigma: float
    widths: tuple = ()
    certificate: tuple = ()

    def __post_init__(self):
        rects = tuple(tuple((float(lo), float(hi)) for lo, hi in r) for r in self.rects)
        axes = tuple(int(a) for a in self.axes)
        if not rects or len(rects) != len(axes):
            raise ValueError("need one long axis per rectangle")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        widths = []
        for r, a in zip(rects, axes):
            if any(not (0 <= lo < hi <= 1) for lo, hi in r):
                raise ValueError(f"rectangle {r} is not inside the unit square")
            long_side = r[a - 1][1] - r[a - 1][0]
            width = r[2 - a][1] - r[2 - a][0]
            if not math.isclose(long_side, self.sigma * width, rel_tol=1e-9):
                raise ValueError(f"rectangle {r}: long side {long_side} != sigma * width {self.sigma * width}")
            widths.append(width)
        cert = []
        for i, r in enumerate(rects):
            dist = min((_rect_distance(r, o) for j, o in enumerate(rects) if j != i), default=math.inf)
            diam = _rect_diameter(r)
            if dist < diam - 1e-12:
                raise ValueError(f"rectangle {i} is {dist:.4g} from the others, below its diameter {diam:.4g}")
            cert.append((dist, diam))
        object.__setattr__(self, "rects", rects)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "widths", tuple(widths))
        object.__setattr__(self, "certificate", tuple(cert))

    def __len__(self) -> int:
        return len(self.rects)

    @classmethod
    def row(cls, k: int, width: float, sigma: float = 2.0, y0: float = 0.25) -> "RectangleFamily":
        """k horizontal rectangles along a row, gaps rounded up to multiples of the width."""
        length = sigma * width
        gap = math.ceil(math.hypot(width, length) / width - 1e-12) * width
        rects = [((i * (length + gap), i * (length + gap) + length), (y0, y0 + width)) for i in range(k)]
        return cls(tuple(rects), (1,) * k, sigma)

    def resolution_levels(self, N: int) -> tuple:
        """n_i: smallest n such that every rectangle of these dimensions contains a level-n square."""
        out = []
        for w in self.widths:
            short = min(w, self.sigma * w)
            out.append(int(math.ceil(math.log(2 / short) / math.log(N) - 1e-12)))
        return tuple(out)

    def to_dict(self) -> dict:
        return {"rects": [list(map(list, r)) for r in self.rects], "axes": list(self.axes),
                "sigma": self.sigma, "widths": list(self.widths),
                "certificate": [list(c) for c in self.certificate]}


def blocking_set(rect, axis: int, N: int, level: int) -> np.ndarray:
    """Level-``level`` cells whose whitening blocks every black long-direction crossing.

    A single wall of cells across the rectangle, one cell thick in the long
    direction, placed in the middle and clear of both end faces. With
    Chebyshev adjacency a path cannot step over it, and no smaller set works
    because a blocking set must span the width with a 4-connected chain.
    """
    side = N**level
    a = axis - 1
    r = np.asarray(rect, dtype=np.float64).reshape(2, 2)
    lo, hi = r[a]
    # columns whose closed boxes stay off both end faces
    first = int(math.floor(lo * side + 1e-9)) + 1
    last = int(math.ceil(hi * side - 1e-9)) - 2
    if first > last:
        raise ValueError("rectangle too short at this level for an interior wall")
    col = (first + last) // 2
    t0, t1 = r[1 - a]
    rows = np.arange(max(0, int(math.ceil(t0 * side - 1e-9)) - 1), min(side, int(math.floor(t1 * side + 1e-9)) + 1))
    cells = np.zeros((len(rows), 2), dtype=np.int64)
    cells[:, a] = col
    cells[:, 1 - a] = rows
    return cells


def whiten(config: LevelConfiguration, cells: np.ndarray, level: int) -> LevelConfiguration:
    """Remove every level-n cell lying inside one of the given level-``level`` cells."""
    if level > config.level:
        raise ValueError("blocking cells must be no finer than the configuration")
    anc = config.coords // config.N ** (config.level - level)
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, config.d)
    keyed = {tuple(c) for c in cells.tolist()}
    keep = np.array([tuple(c) not in keyed for c in anc.tolist()], dtype=bool) if len(anc) else np.zeros(0, bool)
    return config.with_coords(config.coords[keep])


@dataclass
class H2Report:
    params: dict
    n: int
    trials: int
    family: dict
    joint: EstimateReport
    individual: list
    conditional: list
    rho_hat: float
    product_bound: float
    consistent: bool
    inclusion_violations: int
    blocking_sizes: list
    rho_upper: list

    def to_dict(self) -> dict:
        return {"params": self.params, "n": self.n, "trials": self.trials, "family": self.family,
                "joint": self.joint.to_dict(), "individual": [r.to_dict() for r in self.individual],
                "conditional": [r.to_dict() for r in self.conditional], "rho_hat": self.rho_hat,
                "product_bound": self.product_bound, "consistent": self.consistent,
                "inclusion_violations": self.inclusion_violations,
                "blocking_sizes": self.blocking_sizes, "rho_upper": self.rho_upper}

    def rows(self) -> list[dict]:
        base = {**self.params, "n": self.n, "version": __version__}
        out = [{**base, "event": "joint", "rect": "all", "estimate": self.joint.estimate,
                "ci_low": self.joint.ci_low, "ci_high": self.joint.ci_high}]
        for i, (a, b) in enumerate(zip(self.individual, self.conditional)):
            out.append({**base, "event": "interface", "rect": i, "estimate": a.estimate,
                        "ci_low": a.ci_low, "ci_high": a.ci_high})
            out.append({**base, "event": "black_given_full", "rect": i, "estimate": b.estimate,
                        "ci_low": b.ci_low, "ci_high": b.ci_high})
        out.append({**base, "event": "rho_hat^k", "rect": "all", "estimate": self.rho_hat ** len(self.individual),
                    "ci_low": "", "ci_high": ""})
        return out


def h2_experiment(params: ProcessParams, n: int, family: RectangleFamily, trials: int,
                  level: float = 0.95, conditional_trials: Optional[int] = None) -> H2Report:
    """Joint frequency of long interface crossings against max_i P(black crossing | full to n_i)^k.

    Every trial also checks that an interface crossing implies a black one.
    Conditional frequencies use fresh trials with retention forced up to n_i.
    ``consistent`` is true when the joint Wilson lower bound does not exceed
    rho_hat^k.
    """
    if params.d != 2:
        raise ValueError("H2 experiment needs d = 2")
    k = len(family)
    levels = family.resolution_levels(params.N)
    if max(levels) >= n:
        raise ValueError(f"need n > max n_i = {max(levels)}")
    ci = np.zeros((trials, k), dtype=bool)
    violations = 0
    for t, s in enumerate(rng.trial_seeds(params.seed, trials)):
        cfg = generate_level(params.with_seed(int(s)), n)
        F = trace_interfaces(cfg)
        for i, (rect, axis) in enumerate(zip(family.rects, family.axes)):
            ci[t, i] = rectangle_interface_crossing(F, rect, axis)
            if ci[t, i] and not rectangle_crossing(cfg, rect, axis):
                violations += 1
    meta = {**params.to_dict(), "n": n}
    joint = EstimateReport.proportion("joint_interface", int(ci.all(axis=1).sum()), trials, params.seed,
                                      level, meta)
    individual = [EstimateReport.proportion(f"interface_{i}", int(ci[:, i].sum()), trials, params.seed,
                                            level, meta) for i in range(k)]
    ct = conditional_trials or trials
    conditional = []
    for i, (rect, axis, ni) in enumerate(zip(family.rects, family.axes, levels)):
        hits = 0
        for s in rng.trial_seeds(params.seed, ct, start=(i + 1) * 10**9):
            cfg = generate_level(params.with_seed(int(s)), n, full_until=ni)
            hits += rectangle_crossing(cfg, rect, axis)
        conditional.append(EstimateReport.proportion(f"black_given_full_{i}", hits, ct, params.seed, level,
                                                     {**meta, "full_until": ni}))
    rho = max(r.estimate for r in conditional)
    product = float(np.prod([r.estimate for r in conditional]))
    sizes = [len(blocking_set(r, a, params.N, ni + 1)) for r, a, ni in zip(family.rects, family.axes, levels)]
    rho_upper = [1 - (1 - params.p) ** sz for sz in sizes]
    return H2Report(meta, n, trials, family.to_dict(), joint, individual, conditional, rho, product,
                    bool(joint.ci_low <= rho**k), violations, sizes, rho_upper)


# -- run_plan -----------------------------------------------------------------

def _csv_text(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        cols = list(rows[0].keys())
        for r in rows[1:]:
            cols += [c for c in r if c not in cols]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: _fmt(r.get(c, "")) for c in cols})
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating, np.integer)):
        return repr(v.item())
    return v


def _report_rows(reports: Iterable[EstimateReport]) -> list[dict]:
    out = []
    for r in reports:
        meta = {k: v for k, v in r.metadata.items() if not isinstance(v, (dict, list))}
        out.append({**meta, "name": r.name, "trials": r.n_samples, "estimate": r.estimate,
                    "ci_low": r.ci_low, "ci_high": r.ci_high, "level": r.level, "method": r.method,
                    "master_seed": r.seed, "version": __version__})
    return out


def _run_estimator(name: str, plan: ExperimentPlan) -> list[dict]:
    from .dimension import config_box_dimension, estimate_phi, theoretical_dimension, zn_statistics

    opt = dict(plan.options.get(name, {}))
    if name == "theta":
        return _report_rows(estimate_theta(plan, opt.get("level", 0.95)))
    rows = []
    for p in plan.p_grid:
        params = plan.params(p, plan.seed)
        if name == "phi":
            for n in plan.n_grid:
                rows += _report_rows([estimate_phi(params, n, plan.trials, opt.get("level", 0.95),
                                                   opt.get("generalized", False))])
        elif name == "zn":
            for n in plan.n_grid:
                r = zn_statistics(params, n, plan.trials, opt.get("level", 0.95))
                rows += _report_rows([r])
        elif name == "dimension":
            for n in plan.n_grid:
                for t, s in enumerate(plan.seeds()):
                    cfg = generate_level(params.with_seed(int(s)), n)
                    fit = config_box_dimension(cfg) if cfg.z_n and n >= 3 else None
                    rows.append({**params.to_dict(), "seed": int(s), "n": n, "trial": t, "z_n": cfg.z_n,
                                 "slope": fit.slope if fit else "", "lower": fit.lower if fit else "",
                                 "upper": fit.upper if fit else "",
                                 "theory": theoretical_dimension(params) if p > 0 else "",
                                 "version": __version__})
        elif name == "tail":
            fam = AnnulusFamily(**opt.get("family", {}))
            for n in plan.n_grid:
                rep = estimate_disjoint_crossing_tail(params, n, plan.trials, fam, tuple(opt.get("ks", (1, 2, 3))),
                                                      bootstrap=opt.get("bootstrap", 200))
                rows += rep.rows()
        elif name == "r_eps":
            dist = sample_r_epsilon_k(params, plan.n_grid, plan.trials, opt.get("eps", 0.5), opt.get("k", 2))
            rows += dist.rows()
        elif name == "h2":
            fam_opt = opt.get("family", {"k": 3, "width": 1 / 16, "sigma": 2.0})
            fam = RectangleFamily.row(**fam_opt) if "k" in fam_opt else RectangleFamily(**fam_opt)
            for n in plan.n_grid:
                rows += h2_experiment(params, n, fam, plan.trials).rows()
    return rows


def run_plan(plan: ExperimentPlan, output_dir: Optional[str] = None) -> dict:
    """Run every estimator of the plan; write ``<estimator>.csv`` files plus ``manifest.json``.

    A failing estimator is recorded in the manifest and does not stop the
    others. Outputs hold no timestamps, so equal plans give identical bytes.
    """
    out_dir = output_dir or plan.output_dir
    manifest = {"tool": "fracperc", "version": __version__, "plan": plan.to_dict(), "estimators": {}}
    for name in plan.estimators:
        try:
            text = _csv_text(_run_estimator(name, plan))
        except Exception as exc:  # reported, the rest of the plan still runs
            manifest["estimators"][name] = {"status": "error", "error": f"{type(exc).__name__}: {exc}"}
            continue
        entry = {"status": "ok", "file": f"{name}.csv", "sha256": hashlib.sha256(text.encode()).hexdigest()}
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            with open(os.path.join(out_dir, f"{name}.csv"), "w", newline="") as fh:
                fh.write(text)
        else:
            entry["content"] = text
        manifest["estimators"][name] = entry
    if out_dir:
        with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return manifest
