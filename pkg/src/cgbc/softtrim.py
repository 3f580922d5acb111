"""Robust aggregation of per-prompt scores into one class score.

The default estimator ("soft_trim") centers on the sample median, measures
spread with the median absolute deviation, estimates the fraction of
contaminated scores from the tail mass beyond lam * MAD, and converts each
score's normalized deviation into a logistic keep-probability that is used
as a weight in a weighted mean:

    m      = median(S)
    MAD    = median(|S - m|)
    rho    = clamp(mean(|S - m| > lam * MAD), 1/(2M), 0.5 - 1e-6)
    w_j    = sigmoid(-log((1 - rho)/rho) * slope * |S_j - m| / MAD)
    mu_hat = sum(w_j * S_j) / sum(w_j)

All estimators in the family are affine equivariant: aggregating a*S + b
(a > 0) yields a*mu_hat + b with identical weights.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

# Smallest admissible contamination estimate is one half-count out of M; the
# ceiling keeps the log-odds finite.
RHO_CEIL = 0.5 - 1e-6

# Logistic weights can underflow to exactly 0.0 for extreme deviations under
# large slopes; a tiny floor keeps every weight strictly positive so the
# normalizer never vanishes. At realistic set sizes the floor is far below
# any weight that influences the mean.
WEIGHT_FLOOR = 1e-12


class AggregatorMode(str, enum.Enum):
    PRIOR_MEAN = "prior_mean"
    SOFT_TRIM = "soft_trim"
    MEDIAN_ONLY = "median_only"
    HARD_TRIM = "hard_trim"
    HUBER = "huber"
    CAUCHY = "cauchy"
    CONFIDENCE = "confidence"


@dataclass(frozen=True)
class AggregatorConfig:
    mode: AggregatorMode = AggregatorMode.SOFT_TRIM
    lam: float = 2.5               # deviation cut, in MAD units
    slope: float = math.exp(4.6)   # logistic sharpness
    huber_delta: float = 1.345
    cauchy_gamma: float = 2.385

    def __post_init__(self):
        object.__setattr__(self, "mode", AggregatorMode(self.mode))
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValueError(f"lam must be positive, got {self.lam}")
        if not (self.slope > 0 and math.isfinite(self.slope)):
            raise ValueError(f"slope must be positive, got {self.slope}")
        if self.huber_delta <= 0 or self.cauchy_gamma <= 0:
            raise ValueError("huber_delta and cauchy_gamma must be positive")


@dataclass(frozen=True)
class SoftTrimEstimate:
    mu_hat: float
    median: float
    mad: float
    rho_hat: float
    weights: np.ndarray
    used_fallback: bool = False  # hard_trim removed every score; median used


def _validate_scores(scores) -> np.ndarray:
    x = np.asarray(scores, dtype=np.float64)
    if x.ndim != 1:
        x = x.reshape(-1)
    if x.size == 0:
        raise ValueError("empty score set")
    if not np.all(np.isfinite(x)):
        raise ValueError("scores must be finite")
    return x


def median(scores) -> float:
    return float(np.median(_validate_scores(scores)))


def mad(scores, m: float) -> float:
    """Median absolute deviation around a precomputed center m."""
    x = _validate_scores(scores)
    return float(np.median(np.abs(x - m)))


def estimate_rho(scores, m: float, mad_value: float, lam: float) -> float:
    """Estimated contamination rate: tail mass beyond lam * MAD, clamped.

    The clamp keeps the value inside [1/(2M), 0.5 - 1e-6] so the log-odds
    used by the weights stays finite. Zero MAD carries no spread information
    and maps to the floor.
    """
    x = _validate_scores(scores)
    m_count = x.size
    floor = min(1.0 / (2.0 * m_count), RHO_CEIL)
    if mad_value == 0.0:
        return floor
    raw = float(np.mean(np.abs(x - m) > lam * mad_value))
    return float(min(max(raw, floor), RHO_CEIL))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def soft_trim_weights(scores, m: float, mad_value: float, rho: float, slope: float) -> np.ndarray:
    """Logistic keep-probability per score; 1.0 everywhere when MAD is 0."""
    x = _validate_scores(scores)
    if not (0.0 < rho < 0.5):
        raise ValueError(f"rho must lie in (0, 0.5), got {rho}")
    if mad_value == 0.0:
        return np.ones_like(x)
    log_odds_clean = math.log((1.0 - rho) / rho)
    arg = -log_odds_clean * slope * np.abs(x - m) / mad_value
    return np.maximum(_sigmoid(arg), WEIGHT_FLOOR)


def robust_mean(scores, weights) -> float:
    x = _validate_scores(scores)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != x.shape:
        raise ValueError("weights shape does not match scores")
    total = float(w.sum())
    assert total > 0.0, "weight sum vanished despite the weight floor"
    return float(np.dot(w, x) / total)


def aggregate(scores, cfg: AggregatorConfig) -> SoftTrimEstimate:
    """Aggregate a score set under one of the estimator modes.

    Median, MAD, and the contamination estimate are always computed so that
    callers can inspect them regardless of mode.
    """
    x = _validate_scores(scores)
    m = float(np.median(x))
    d = float(np.median(np.abs(x - m)))
    rho = estimate_rho(x, m, d, cfg.lam)
    dev = np.abs(x - m)
    fallback = False

    mode = cfg.mode
    if mode is AggregatorMode.PRIOR_MEAN:
        w = np.ones_like(x)
        mu = float(np.mean(x))
    elif mode is AggregatorMode.SOFT_TRIM:
        w = soft_trim_weights(x, m, d, rho, cfg.slope)
        mu = robust_mean(x, w)
    elif mode is AggregatorMode.MEDIAN_ONLY:
        w = np.ones_like(x)
        mu = m
    elif mode is AggregatorMode.HARD_TRIM:
        w = (dev <= cfg.lam * d).astype(np.float64)
        if w.sum() == 0.0:
            fallback = True
            mu = m
        else:
            mu = robust_mean(x, w)
    elif mode is AggregatorMode.HUBER:
        if d == 0.0:
            w = np.ones_like(x)
        else:
            with np.errstate(divide="ignore"):
                w = np.minimum(1.0, np.where(dev > 0, cfg.huber_delta * d / np.where(dev > 0, dev, 1.0), 1.0))
        mu = robust_mean(x, w)
    elif mode is AggregatorMode.CAUCHY:
        if d == 0.0:
            w = np.ones_like(x)
        else:
            w = 1.0 / (1.0 + (dev / (cfg.cauchy_gamma * d)) ** 2)
        mu = robust_mean(x, w)
    elif mode is AggregatorMode.CONFIDENCE:
        w = np.ones_like(x)
        mu = float(np.max(x))
    else:  # pragma: no cover - enum is closed
        raise ValueError(f"unknown aggregator mode {mode}")

    return SoftTrimEstimate(
        mu_hat=mu, median=m, mad=d, rho_hat=rho, weights=w, used_fallback=fallback
    )
