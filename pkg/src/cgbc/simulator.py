"""Monte-Carlo verification harness for the robust aggregator.

Three studies live here. The error sweep draws contaminated Gaussian score
sets over a grid of contamination rates and sample sizes and records the 95th
percentile of absolute estimation error for the soft estimator, the plain
mean, and the median. The goodness check removes the largest fraction of a
sample and confirms the induced mean and variance shifts stay within the
resilience envelope a Gaussian sample should satisfy. The excess-risk study
runs a full multi-class decision per trial with adversarial outliers that
pull the true class down and push the impostors up, then verifies that
misclassification never outruns the large-estimation-error event containing
it.

Scores here live on an unconstrained real scale; the unit-interval convention
only applies at the classifier boundary.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SimulationCheckError
from .seeds import STREAM_TRIAL, spawn
from .softtrim import AggregatorConfig, AggregatorMode, aggregate

DEFAULT_DELTA = 0.05


@dataclass(frozen=True)
class PointMass:
    """Every outlier lands exactly at mean + offset * sigma."""

    offset: float

    def draw(self, rng, n: int, mean: float, sigma: float) -> np.ndarray:
        return np.full(n, mean + self.offset * sigma, dtype=np.float64)


@dataclass(frozen=True)
class ShiftedGaussian:
    """Outliers are Gaussian around mean + offset * sigma with width scale * sigma."""

    offset: float
    scale: float

    def draw(self, rng, n: int, mean: float, sigma: float) -> np.ndarray:
        center = mean + self.offset * sigma
        return center + self.scale * sigma * rng.normal(size=n)


@dataclass(frozen=True)
class UniformOutliers:
    """Outliers are uniform on [mean + low * sigma, mean + high * sigma]."""

    low: float
    high: float

    def __post_init__(self):
        if not self.high > self.low:
            raise ValueError("high must exceed low")

    def draw(self, rng, n: int, mean: float, sigma: float) -> np.ndarray:
        return mean + sigma * rng.uniform(self.low, self.high, size=n)


@dataclass(frozen=True)
class ContaminationSpec:
    mean: float
    sigma: float
    outlier_rate: float
    sample_size: int
    outliers: object
    seed: int

    def __post_init__(self):
        if not (0.0 <= self.outlier_rate < 0.5):
            raise ValueError(
                f"outlier_rate must lie in [0, 0.5), got {self.outlier_rate}"
            )
        if self.sample_size < 1:
            raise ValueError("sample_size must be >= 1")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError("sigma must be finite and positive")


def sample_contaminated(spec: ContaminationSpec, rng):
    """One contaminated score set. Returns (scores, outlier_mask).

    Draw order is fixed (mask, clean noise, outliers) so replaying the same
    generator state reproduces the sample exactly.
    """
    n = spec.sample_size
    mask = rng.random(n) < spec.outlier_rate
    scores = spec.mean + spec.sigma * rng.normal(size=n)
    k = int(mask.sum())
    if k:
        scores[mask] = spec.outliers.draw(rng, k, spec.mean, spec.sigma)
    return scores, mask


@dataclass(frozen=True)
class CellResult:
    spec: ContaminationSpec
    trials: int
    err_soft: np.ndarray
    err_mean: np.ndarray
    err_median: np.ndarray
    rho_hats: np.ndarray


def simulate_cell(
    spec: ContaminationSpec,
    trials: int,
    lam: float = 2.5,
    slope: float = math.exp(4.6),
    cell_index: int = 0,
) -> CellResult:
    """Per-trial absolute errors of soft estimator, mean, and median.

    Trial t draws from the stream (seed, trial-tag, cell_index, t), so any
    single trial can be replayed without rerunning the ones before it.
    """
    cfg = AggregatorConfig(mode=AggregatorMode.SOFT_TRIM, lam=lam, slope=slope)
    err_soft = np.empty(trials)
    err_mean = np.empty(trials)
    err_median = np.empty(trials)
    rho_hats = np.empty(trials)
    for t in range(trials):
        rng = spawn(spec.seed, STREAM_TRIAL, cell_index, t)
        scores, _ = sample_contaminated(spec, rng)
        est = aggregate(scores, cfg)
        err_soft[t] = abs(est.mu_hat - spec.mean)
        err_mean[t] = abs(float(scores.mean()) - spec.mean)
        err_median[t] = abs(est.median - spec.mean)
        rho_hats[t] = est.rho_hat
    return CellResult(
        spec=spec, trials=trials, err_soft=err_soft, err_mean=err_mean,
        err_median=err_median, rho_hats=rho_hats,
    )


@dataclass(frozen=True)
class SweepRow:
    outlier_rate: float
    sample_size: int
    slope: float
    q95_err_soft: float
    q95_err_mean: float
    q95_err_median: float
    mean_rho_hat: float


@dataclass(frozen=True)
class SweepResult:
    rows: tuple
    exponents: dict       # str(rate) -> fitted log-log slope of q95 vs size
    crossover_ratio: dict  # "rho=r,M=n" -> rate^2 * size / log(1/delta)
    delta: float
    trials: int
    lam: float
    slope: float


def run_error_sweep(
    outlier_rates,
    sample_sizes,
    seed: int,
    trials: int = 500,
    lam: float = 2.5,
    slope: float = math.exp(4.6),
    sigma: float = 0.1,
    mean: float = 0.5,
    outliers=None,
    delta: float = DEFAULT_DELTA,
) -> SweepResult:
    """Grid sweep over contamination rate and sample size.

    The fitted exponent per rate comes from a least-squares line through
    (log size, log q95 soft error); on clean rows it should sit near the
    Monte-Carlo rate of -1/2. The crossover ratio says whether a cell is
    noise dominated (below 1) or contamination dominated (above 1).
    """
    if outliers is None:
        outliers = PointMass(offset=10.0)
    rows = []
    cell_index = 0
    for rate in outlier_rates:
        for size in sample_sizes:
            spec = ContaminationSpec(
                mean=mean, sigma=sigma, outlier_rate=rate,
                sample_size=size, outliers=outliers, seed=seed,
            )
            cell = simulate_cell(spec, trials, lam=lam, slope=slope, cell_index=cell_index)
            rows.append(SweepRow(
                outlier_rate=rate,
                sample_size=size,
                slope=slope,
                q95_err_soft=float(np.quantile(cell.err_soft, 0.95)),
                q95_err_mean=float(np.quantile(cell.err_mean, 0.95)),
                q95_err_median=float(np.quantile(cell.err_median, 0.95)),
                mean_rho_hat=float(cell.rho_hats.mean()),
            ))
            cell_index += 1

    exponents = {}
    sizes = list(sample_sizes)
    for rate in outlier_rates:
        qs = [r.q95_err_soft for r in rows if r.outlier_rate == rate]
        if len(sizes) >= 2 and all(q > 0 for q in qs):
            b = np.polyfit(np.log(np.asarray(sizes, dtype=float)), np.log(qs), 1)[0]
            exponents[str(rate)] = float(b)
        else:
            exponents[str(rate)] = float("nan")

    crossover = {
        f"rho={r.outlier_rate},M={r.sample_size}":
            r.outlier_rate ** 2 * r.sample_size / math.log(1.0 / delta)
        for r in rows
    }
    return SweepResult(
        rows=tuple(rows), exponents=exponents, crossover_ratio=crossover,
        delta=delta, trials=trials, lam=lam, slope=slope,
    )


SWEEP_CSV_COLUMNS = (
    "rho", "M", "slope", "q95_err_soft", "q95_err_mean", "q95_err_median",
    "mean_rho_hat",
)


def write_sweep_csv(result: SweepResult, path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_CSV_COLUMNS)
        for r in result.rows:
            writer.writerow([
                f"{r.outlier_rate:.12g}", r.sample_size, f"{r.slope:.12g}",
                f"{r.q95_err_soft:.12g}", f"{r.q95_err_mean:.12g}",
                f"{r.q95_err_median:.12g}", f"{r.mean_rho_hat:.12g}",
            ])
    return path


def write_sweep_summary(result: SweepResult, path) -> Path:
    path = Path(path)
    payload = {
        "delta": result.delta,
        "trials_per_cell": result.trials,
        "lam": result.lam,
        "slope": result.slope,
        "cells": len(result.rows),
        "exponents": result.exponents,
        "crossover_ratio": result.crossover_ratio,
    }
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return path


def check_goodness(scores, mean: float, sigma: float, alphas=(0.05, 0.1, 0.2), tol: float = 5.0):
    """Resilience check: removing the largest alpha fraction of a Gaussian
    sample shifts the mean by at most order sigma * alpha * sqrt(log(1/alpha))
    and the variance by order sigma^2 * alpha * log(1/alpha). Removing the
    largest values (rather than largest deviations) maximizes the mean shift,
    so this is the harsh direction.

    Returns {alpha: (mean_ratio, var_ratio)}; raises SimulationCheckError when
    a ratio exceeds tol. For honest Gaussian samples the ratios sit near 1.3.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.size
    out = {}
    for alpha in alphas:
        if not (0.0 < alpha < 0.5):
            raise ValueError(f"alpha must lie in (0, 0.5), got {alpha}")
        k = max(1, int(round(alpha * n)))
        kept = np.sort(scores)[: n - k]
        mean_shift = abs(float(kept.mean()) - mean)
        var_shift = abs(float(kept.var()) - sigma ** 2)
        mean_ratio = mean_shift / (sigma * alpha * math.sqrt(math.log(1.0 / alpha)))
        var_ratio = var_shift / (sigma ** 2 * alpha * math.log(1.0 / alpha))
        out[alpha] = (mean_ratio, var_ratio)
        if mean_ratio > tol or var_ratio > tol:
            raise SimulationCheckError(
                f"sample is not Gaussian-resilient at alpha={alpha}: "
                f"mean ratio {mean_ratio:.2f}, variance ratio {var_ratio:.2f} "
                f"(tolerance {tol})"
            )
    return out


@dataclass(frozen=True)
class RiskSpec:
    num_classes: int
    outlier_rate: float
    scores_per_class: int
    margin: float            # separation between true-class and impostor means
    sigma: float
    trials: int
    seed: int
    adversarial_offset: float = 10.0   # in sigma units; sign set per class
    aggregator_mode: AggregatorMode = AggregatorMode.SOFT_TRIM
    lam: float = 2.5
    slope: float = field(default_factory=lambda: math.exp(4.6))

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if not (0.0 <= self.outlier_rate < 0.5):
            raise ValueError(f"outlier_rate must lie in [0, 0.5), got {self.outlier_rate}")
        if self.scores_per_class < 1 or self.trials < 1:
            raise ValueError("scores_per_class and trials must be >= 1")
        if not (self.margin > 0 and self.sigma > 0):
            raise ValueError("margin and sigma must be positive")


@dataclass(frozen=True)
class RiskResult:
    trials: int
    mis_count: int
    event_count: int
    mis_rate: float
    event_rate: float
    event_se: float
    bound_holds: bool
    threshold: float


def run_excess_risk(spec: RiskSpec) -> RiskResult:
    """Per-trial multi-class decision under adversarial contamination.

    The true class (index 0) gets outliers at -offset sigma below its mean,
    impostors get them at +offset sigma above theirs: the worst direction for
    an argmax decision. A misclassified trial forces some class's aggregate
    to miss its mean by at least margin / 2, so the misclassification rate
    can never exceed the large-error event rate; bound_holds checks that with
    a three-standard-error cushion on the event estimate.
    """
    cfg = AggregatorConfig(mode=spec.aggregator_mode, lam=spec.lam, slope=spec.slope)
    true_mean = 0.5 + spec.margin / 2.0
    impostor_mean = 0.5 - spec.margin / 2.0
    threshold = spec.margin / 2.0

    mis_count = 0
    event_count = 0
    for t in range(spec.trials):
        rng = spawn(spec.seed, STREAM_TRIAL, t)
        estimates = np.empty(spec.num_classes)
        max_err = 0.0
        for c in range(spec.num_classes):
            center = true_mean if c == 0 else impostor_mean
            offset = -spec.adversarial_offset if c == 0 else spec.adversarial_offset
            sub = ContaminationSpec(
                mean=center, sigma=spec.sigma, outlier_rate=spec.outlier_rate,
                sample_size=spec.scores_per_class,
                outliers=PointMass(offset=offset), seed=spec.seed,
            )
            scores, _ = sample_contaminated(sub, rng)
            estimates[c] = aggregate(scores, cfg).mu_hat
            max_err = max(max_err, abs(estimates[c] - center))
        mis_count += int(np.argmax(estimates)) != 0
        event_count += max_err >= threshold

    mis_rate = mis_count / spec.trials
    event_rate = event_count / spec.trials
    event_se = math.sqrt(event_rate * (1.0 - event_rate) / spec.trials)
    return RiskResult(
        trials=spec.trials, mis_count=mis_count, event_count=event_count,
        mis_rate=mis_rate, event_rate=event_rate, event_se=event_se,
        bound_holds=mis_rate <= event_rate + 3.0 * event_se,
        threshold=threshold,
    )
