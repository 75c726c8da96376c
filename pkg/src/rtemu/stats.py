"""Order statistics for latency samples."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, fields
from typing import Sequence

# Reported alongside results so a summary says how its quartiles were computed.
QUANTILE_METHOD = "linear interpolation at rank (n-1)q"


class EmptySampleError(ValueError):
    pass


def quantile(sorted_samples: Sequence[float], q: float) -> float:
    """Quantile of already-sorted samples, interpolating linearly between order statistics."""
    n = len(sorted_samples)
    if n == 0:
        raise EmptySampleError("quantile of an empty sample set")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q={q} outside [0, 1]")
    h = (n - 1) * q
    lo = math.floor(h)
    hi = min(lo + 1, n - 1)
    frac = h - lo
    a, b = sorted_samples[lo], sorted_samples[hi]
    if frac == 0 or a == b:
        return a
    return a + (b - a) * frac


@dataclass(frozen=True)
class BoxplotStats:
    n: int
    min: float
    q1: float
    median: float
    q3: float
    max: float
    mean: float
    stdev: float

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1

    @property
    def spread(self) -> float:
        return self.max - self.min

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def boxplot_stats(samples: Sequence[float]) -> BoxplotStats:
    """Quartile hinges, min/max whiskers (no outlier fences), mean and population stdev."""
    if not samples:
        raise EmptySampleError("empty sample set")
    xs = sorted(samples)
    return BoxplotStats(
        n=len(xs),
        min=xs[0],
        q1=quantile(xs, 0.25),
        median=quantile(xs, 0.5),
        q3=quantile(xs, 0.75),
        max=xs[-1],
        mean=statistics.fmean(xs),
        stdev=statistics.pstdev(xs) if len(xs) > 1 else 0.0,
    )
