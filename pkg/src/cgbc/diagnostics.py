"""Distribution diagnostics for similarity score sets.

Population (biased) moments are used throughout: the score sets under study
are complete populations of per-prompt scores, not samples from a larger
set, and the flag thresholds below were tuned against population values.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass

import numpy as np

SKEW_FLAG_ABOVE = 0.5
EXCESS_KURTOSIS_FLAG_ABOVE = 3.0
MIN_SCORES = 4  # kurtosis is meaningless below this


@dataclass(frozen=True)
class DistributionFlags:
    skewed: bool
    heavy_tailed: bool
    degenerate: bool = False


@dataclass(frozen=True)
class DistributionReport:
    count: int
    mean: float
    variance: float
    skewness: float
    kurtosis: float  # excess kurtosis: 0 for a Gaussian
    minimum: float
    maximum: float
    qq_points: tuple  # (theoretical normal quantile, empirical value) pairs
    flags: DistributionFlags

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "mean": self.mean,
            "variance": self.variance,
            "skewness": self.skewness,
            "kurtosis": self.kurtosis,
            "min": self.minimum,
            "max": self.maximum,
            "flags": {
                "skewed": self.flags.skewed,
                "heavy_tailed": self.flags.heavy_tailed,
                "degenerate": self.flags.degenerate,
            },
        }


def describe(scores) -> DistributionReport:
    """Moments, normal QQ pairs (Hazen plotting positions), and tail flags."""
    x = np.asarray(scores, dtype=np.float64).reshape(-1)
    if x.size < MIN_SCORES:
        raise ValueError(f"need at least {MIN_SCORES} scores, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("scores must be finite")

    n = x.size
    mean = float(np.mean(x))
    centered = x - mean
    m2 = float(np.mean(centered ** 2))
    if m2 == 0.0:
        skew, kurt, degenerate = 0.0, 0.0, True
    else:
        skew = float(np.mean(centered ** 3) / m2 ** 1.5)
        kurt = float(np.mean(centered ** 4) / m2 ** 2 - 3.0)
        degenerate = False

    nd = statistics.NormalDist()
    order = np.sort(x)
    qq = tuple(
        (nd.inv_cdf((i - 0.5) / n), float(order[i - 1])) for i in range(1, n + 1)
    )
    flags = DistributionFlags(
        skewed=(not degenerate) and abs(skew) > SKEW_FLAG_ABOVE,
        heavy_tailed=(not degenerate) and kurt > EXCESS_KURTOSIS_FLAG_ABOVE,
        degenerate=degenerate,
    )
    return DistributionReport(
        count=n,
        mean=mean,
        variance=m2,
        skewness=skew,
        kurtosis=kurt,
        minimum=float(order[0]),
        maximum=float(order[-1]),
        qq_points=qq,
        flags=flags,
    )
