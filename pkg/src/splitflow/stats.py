"""Confidence intervals for Monte Carlo estimates."""

from __future__ import annotations

import math

import numpy as np

Z95 = 1.959963984540054


def proportion_ci(successes: int, trials: int, z: float = Z95) -> tuple[float, float]:
    """Estimate and CI halfwidth for a binomial proportion.

    Uses the normal approximation, switching to the Wilson score interval when
    fewer than 10 successes or failures make the normal interval unreliable.
    """
    if trials <= 0:
        raise ValueError("trials must be positive")
    p = successes / trials
    if min(successes, trials - successes) >= 10:
        return p, z * math.sqrt(p * (1.0 - p) / trials)
    denom = 1.0 + z * z / trials
    half = z * math.sqrt(p * (1.0 - p) / trials + z * z / (4.0 * trials * trials)) / denom
    centre = (p + z * z / (2.0 * trials)) / denom
    # report the halfwidth around p that covers the Wilson interval
    return p, max(centre + half - p, p - (centre - half))


def mean_ci(samples, z: float = Z95) -> tuple[float, float, float]:
    """Return ``(mean, halfwidth, standard error)`` of the sample mean."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        return math.nan, math.nan, math.nan
    if x.size == 1:
        return float(x[0]), math.inf, math.inf
    se = float(x.std(ddof=1)) / math.sqrt(x.size)
    return float(x.mean()), z * se, se
