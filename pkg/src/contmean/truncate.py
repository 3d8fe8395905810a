"""Truncation intervals for dyadic block sums.

A released block of 2^(level-1) samples is projected onto an interval
centered at 2^(level-1) times a prior mean estimate.  The half-width is
chosen so honest Bernoulli block sums are almost never clipped while the
worst-case change a single user can inject drops from the block size to
twice the half-width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from contmean.median import prior_array_count

__all__ = ["TruncationInterval", "interval_full", "interval_single", "project"]


@dataclass(frozen=True)
class TruncationInterval:
    """Projection target [center - half_width, center + half_width]."""

    center: float
    half_width: float
    level: int

    def __post_init__(self):
        if self.half_width < 0:
            raise ValueError(f"half_width must be nonnegative, got {self.half_width}")

    @property
    def lo(self) -> float:
        return self.center - self.half_width

    @property
    def hi(self) -> float:
        return self.center + self.half_width


def _check_params(m: int, n: int, delta: float) -> None:
    if m < 2:
        raise ValueError(f"m must be >= 2, got {m}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0 < delta <= 1:
        raise ValueError(f"delta must be in (0, 1], got {delta}")


def interval_single(prior: float, level: int, m: int, n: int, delta: float) -> TruncationInterval:
    """Interval for the prior-assuming estimators at a given release level.

    Half-width: sqrt((2^(level-1)/2) * ln(2 n log2(m) / delta))
                + 2^(level-1)/sqrt(m).
    """
    _check_params(m, n, delta)
    if level < 1:
        raise ValueError(f"level must be >= 1, got {level}")
    size = 2.0 ** (level - 1)
    width = math.sqrt((size / 2.0) * math.log(2.0 * n * math.log2(m) / delta))
    width += size / math.sqrt(m)
    return TruncationInterval(center=size * prior, half_width=width, level=level)


def interval_full(
    prior_ell: float, level: int, n: int, m: int, eps: float, delta: float
) -> TruncationInterval:
    """Interval for the no-prior estimator, sized for a private-median prior.

    Half-width: sqrt((2^(level-1)/2) * ln(2 n log2(m) / (delta/3)))
                + sqrt(2^level * ln(2 k / (delta/3L)))
    with L = ceil(log2 m) and k the array count the level-``level`` median
    prior was computed from, at budget eps/2L and failure delta/3L.
    """
    _check_params(m, n, delta)
    if level < 2:
        raise ValueError(f"full-estimator truncation starts at level 2, got {level}")
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    big_l = math.ceil(math.log2(m))
    size = 2.0 ** (level - 1)
    k = prior_array_count(eps / (2.0 * big_l), level, delta / (3.0 * big_l))
    width = math.sqrt((size / 2.0) * math.log(2.0 * n * math.log2(m) / (delta / 3.0)))
    width += math.sqrt(2.0**level * math.log(2.0 * k / (delta / (3.0 * big_l))))
    return TruncationInterval(center=size * prior_ell, half_width=width, level=level)


def project(interval: TruncationInterval, s: float) -> float:
    """Clamp s into the interval (identity on interior points)."""
    return min(max(s, interval.lo), interval.hi)
