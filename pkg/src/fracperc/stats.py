"""Confidence intervals and the EstimateReport container."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
from scipy.stats import norm


def z_value(level: float) -> float:
    if not 0 < level < 1:
        raise ValueError("confidence level must be in (0, 1)")
    return float(norm.ppf(0.5 + level / 2))


def wilson_interval(successes: int, n: int, level: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n < 1:
        raise ValueError("need at least one trial")
    if not 0 <= successes <= n:
        raise ValueError("successes must lie in [0, n]")
    z = z_value(level)
    phat = successes / n
    denom = 1 + z * z / n
    centre = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    lo, hi = max(0.0, centre - half), min(1.0, centre + half)
    # guard the endpoints against rounding so the interval always holds phat
    return min(lo, phat), max(hi, phat)


def mean_interval(values, level: float = 0.95) -> tuple[float, float, float]:
    """``(mean, lo, hi)`` normal-theory interval; zero width for constant data."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise ValueError("need at least one value")
    m = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    z = z_value(level)
    return m, m - z * se, m + z * se


@dataclass
class EstimateReport:
    """A named scalar estimate with its interval and provenance."""

    name: str
    estimate: float
    ci_low: float
    ci_high: float
    n_samples: int
    seed: int
    level: float = 0.95
    method: str = "wilson"
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("sample count must be >= 1")
        e = self.estimate
        if not (math.isnan(e) or self.ci_low - 1e-12 <= e <= self.ci_high + 1e-12):
            raise ValueError(f"interval [{self.ci_low}, {self.ci_high}] misses estimate {e}")

    @classmethod
    def proportion(cls, name: str, successes: int, n: int, seed: int, level: float = 0.95,
                   metadata: Optional[dict] = None) -> "EstimateReport":
        lo, hi = wilson_interval(successes, n, level)
        return cls(name, successes / n, lo, hi, n, seed, level, "wilson",
                   {"successes": int(successes), **(metadata or {})})

    @classmethod
    def mean(cls, name: str, values, seed: int, level: float = 0.95,
             metadata: Optional[dict] = None) -> "EstimateReport":
        m, lo, hi = mean_interval(values, level)
        return cls(name, m, lo, hi, len(values), seed, level, "normal", dict(metadata or {}))

    def contains(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high

    def to_dict(self) -> dict:
        return {"name": self.name, "estimate": self.estimate,
                "ci": {"low": self.ci_low, "high": self.ci_high, "level": self.level,
                       "method": self.method},
                "n_samples": self.n_samples, "seed": self.seed, "metadata": _plain(self.metadata)}


def _plain(obj: Optional[Any]):
    """Recursively convert numpy scalars/arrays so ``json.dumps`` accepts them."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj
