"""Bisection over a codec's quality grid toward a target metric value."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

from ..errors import InputError

log = logging.getLogger(__name__)

SEARCH_METRICS = ("psnr", "bpp", "ms-ssim")


class NonMonotonicWarning(UserWarning):
    pass


@dataclass
class SearchResult:
    quality: float
    value: float
    metric: str
    target: float
    out_of_range: bool = False
    probes: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def n_probes(self) -> int:
        return len(self.probes)

    def as_dict(self) -> dict:
        return {
            "quality": self.quality,
            "value": self.value,
            "metric": self.metric,
            "target": self.target,
            "out_of_range": self.out_of_range,
            "probes": [{"quality": q, "value": v} for q, v in self.probes],
            "warnings": list(self.warnings),
        }


def probe_budget(n: int) -> int:
    """Worst-case number of metric evaluations for a grid of ``n`` points."""
    return math.ceil(math.log2(n)) + 1 if n > 1 else 1


def bisect_grid(grid, probe, target: float, metric: str = "value") -> SearchResult:
    """Closest grid point to ``target`` for a metric assumed non-decreasing along ``grid``.

    ``probe(q)`` returns the metric at grid value ``q`` and is called at most
    :func:`probe_budget` times. The lower-bound bisection always leaves both
    neighbours of the crossing probed, so the closer of the two is returned.
    """
    grid = list(grid)
    if not grid:
        raise InputError("quality grid is empty")
    cache = {}
    order = []

    def f(i):
        if i not in cache:
            cache[i] = float(probe(grid[i]))
            order.append((grid[i], cache[i]))
        return cache[i]

    lo, hi = 0, len(grid)
    while lo < hi:
        mid = (lo + hi) // 2
        if f(mid) < target:
            lo = mid + 1
        else:
            hi = mid
    if lo == len(grid):
        best, out_of_range = lo - 1, True
    elif lo == 0:
        best, out_of_range = 0, f(0) > target
    else:
        below, above = lo - 1, lo
        best = below if abs(f(below) - target) <= abs(f(above) - target) else above
        out_of_range = False

    notes = []
    probed = sorted(cache.items())
    for (i, a), (j, b) in zip(probed, probed[1:]):
        if b < a:
            msg = f"{metric} decreases from {a:.6g} at quality {grid[i]} to {b:.6g} at quality {grid[j]}"
            notes.append(msg)
            warnings.warn(msg, NonMonotonicWarning, stacklevel=2)
    # closest probed point, in case monotonicity did not hold
    if notes:
        best = min(cache, key=lambda i: (abs(cache[i] - target), i))
    return SearchResult(grid[best], cache[best], metric, target, out_of_range, order, notes)


def find_close(adapter, image, target: float, metric: str = "bpp") -> SearchResult:
    """Quality parameter of ``adapter`` whose ``metric`` on ``image`` is closest to ``target``.

    ``adapter`` needs ``quality_grid()`` and ``measure(image, q)``; the latter
    returns an object with a ``metric(name)`` accessor (an ``RdPoint``).
    """
    if metric not in SEARCH_METRICS:
        raise InputError(f"unknown metric {metric!r}; choose one of {', '.join(SEARCH_METRICS)}")
    grid = adapter.quality_grid()
    result = bisect_grid(grid, lambda q: adapter.measure(image, q).metric(metric), target, metric)
    log.info("find_close %s: %s=%.6g at quality %s after %d probes", adapter.name, metric, result.value, result.quality, result.n_probes)
    return result
