"""Nearest-rank percentiles and small report summaries."""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence

from ..errors import UsageError

TAIL_POINTS = {"p90": 90.0, "p95": 95.0, "p99": 99.0, "p999": 99.9}


def nearest_rank(values: Sequence[float], pct: float) -> float:
    """Smallest value with at least ``pct`` percent of the sample at or below it."""
    if not values:
        raise UsageError("percentile of an empty sample")
    if not 0.0 < pct <= 100.0:
        raise UsageError("percentile must lie in (0, 100]")
    ordered = sorted(values)
    # rounding guards against 99.9 * 1000 / 100 landing just above 999
    rank = max(1, math.ceil(round(pct * len(ordered) / 100.0, 9)))
    return float(ordered[rank - 1])


def percentiles(values: Iterable[float], points: dict[str, float] = TAIL_POINTS) -> dict[str, float]:
    values = list(values)
    return {name: nearest_rank(values, pct) for name, pct in points.items()}
