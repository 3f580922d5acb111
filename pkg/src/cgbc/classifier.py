"""Zero-shot classification of embedded images against per-class prompt sets.

Scoring is a straight composition: cosine similarities between the image and
one class's prompts are mapped to the unit interval, then reduced by the
configured aggregator. The class with the largest aggregate wins, with ties
going to the lowest class index.

Two probability conventions are supported. "affine" reports each class's
aggregate on the [0, 1] scale as-is; the values are per-class scores, not a
distribution. "softmax_over_classes" maps aggregates back to the similarity
scale and applies a scaled softmax across classes, which preserves the argmax
because softmax is monotone in its logits.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CgbcError
from .softtrim import AggregatorConfig, AggregatorMode, SoftTrimEstimate, aggregate
from .store import EmbeddingContainer, sim_to_prob

PROB_MODES = ("affine", "softmax_over_classes")


@dataclass(frozen=True)
class ClassifierConfig:
    aggregator: AggregatorConfig = field(
        default_factory=lambda: AggregatorConfig(mode=AggregatorMode.SOFT_TRIM)
    )
    prob_mode: str = "affine"
    logit_scale: float = math.exp(4.6)

    def __post_init__(self):
        if self.prob_mode not in PROB_MODES:
            raise ValueError(f"prob_mode must be one of {PROB_MODES}, got {self.prob_mode!r}")
        if not (self.logit_scale > 0 and math.isfinite(self.logit_scale)):
            raise ValueError("logit_scale must be finite and positive")


@dataclass(frozen=True)
class ClassPromptSet:
    class_name: str
    prompts: EmbeddingContainer

    def __post_init__(self):
        if not self.prompts.normalized:
            raise CgbcError(f"prompt container for {self.class_name!r} must be normalized")


@dataclass(frozen=True)
class ClassificationRecord:
    image_name: str
    predicted_index: int
    predicted_class: str
    class_scores: tuple
    class_probs: tuple
    mean_rho_hat: float
    true_index: int | None = None

    def to_dict(self) -> dict:
        return {
            "image_name": self.image_name,
            "predicted_index": self.predicted_index,
            "predicted_class": self.predicted_class,
            "class_scores": list(self.class_scores),
            "class_probs": list(self.class_probs),
            "mean_rho_hat": self.mean_rho_hat,
            "true_index": self.true_index,
        }


@dataclass(frozen=True)
class EvaluationReport:
    count: int
    top1: float
    per_class_accuracy: dict
    mean_rho_hat: float
    aggregator_mode: str
    prob_mode: str

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "top1": self.top1,
            "per_class_accuracy": dict(self.per_class_accuracy),
            "mean_rho_hat": self.mean_rho_hat,
            "aggregator_mode": self.aggregator_mode,
            "prob_mode": self.prob_mode,
        }


def _check_prompt_sets(prompt_sets, dim: int):
    if len(prompt_sets) < 2:
        raise CgbcError("need at least two classes to classify against")
    names = [ps.class_name for ps in prompt_sets]
    if len(set(names)) != len(names):
        raise CgbcError("class names must be distinct")
    for ps in prompt_sets:
        if ps.prompts.dim != dim:
            raise CgbcError(
                f"prompt container for {ps.class_name!r} has dim {ps.prompts.dim}, "
                f"image has dim {dim}"
            )


def class_estimate(
    image_vec: np.ndarray, prompt_set: ClassPromptSet, config: AggregatorConfig
) -> SoftTrimEstimate:
    """Full aggregation detail (weights included) for one image against one class."""
    v = np.asarray(image_vec, dtype=np.float64).reshape(-1)
    sims = prompt_set.prompts.rows.astype(np.float64) @ v
    return aggregate(sim_to_prob(sims), config)


def score_image(
    image_name: str,
    image_vec: np.ndarray,
    prompt_sets,
    config: ClassifierConfig,
) -> ClassificationRecord:
    v = np.asarray(image_vec, dtype=np.float64).reshape(-1)
    _check_prompt_sets(prompt_sets, v.shape[0])

    scores = []
    rhos = []
    for ps in prompt_sets:
        est = class_estimate(v, ps, config.aggregator)
        scores.append(est.mu_hat)
        rhos.append(est.rho_hat)
    scores_arr = np.asarray(scores, dtype=np.float64)

    if config.prob_mode == "affine":
        probs = tuple(float(s) for s in scores_arr)
    else:
        logits = config.logit_scale * (2.0 * scores_arr - 1.0)
        logits -= logits.max()  # guard exp overflow; softmax is shift invariant
        e = np.exp(logits)
        probs = tuple(float(p) for p in e / e.sum())

    predicted = int(np.argmax(scores_arr))
    return ClassificationRecord(
        image_name=image_name,
        predicted_index=predicted,
        predicted_class=prompt_sets[predicted].class_name,
        class_scores=tuple(float(s) for s in scores_arr),
        class_probs=probs,
        mean_rho_hat=float(np.mean(rhos)),
    )


def evaluate(
    images: EmbeddingContainer,
    prompt_sets,
    labels: dict,
    config: ClassifierConfig,
    workers: int | None = None,
):
    """Score every image in the container and summarize accuracy.

    Records come back in container order regardless of threading. Classes
    appear in per_class_accuracy only when at least one image carries that
    true label.
    """
    if not images.normalized:
        raise CgbcError("image container must be normalized")
    _check_prompt_sets(prompt_sets, images.dim)
    missing = [n for n in images.names if n not in labels]
    if missing:
        raise CgbcError(f"no label for image {missing[0]!r} ({len(missing)} missing)")

    rows = images.rows.astype(np.float64)

    def one(i: int) -> ClassificationRecord:
        rec = score_image(images.names[i], rows[i], prompt_sets, config)
        return ClassificationRecord(
            **{**rec.__dict__, "true_index": int(labels[images.names[i]])}
        )

    if workers is not None and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(one, range(images.count)))
    else:
        records = [one(i) for i in range(images.count)]

    correct_total = 0
    per_class_hits: dict = {}
    per_class_counts: dict = {}
    for rec in records:
        hit = rec.predicted_index == rec.true_index
        correct_total += hit
        cname = prompt_sets[rec.true_index].class_name
        per_class_hits[cname] = per_class_hits.get(cname, 0) + hit
        per_class_counts[cname] = per_class_counts.get(cname, 0) + 1

    report = EvaluationReport(
        count=len(records),
        top1=correct_total / len(records) if records else 0.0,
        per_class_accuracy={
            name: per_class_hits[name] / per_class_counts[name]
            for name in sorted(per_class_counts)
        },
        mean_rho_hat=float(np.mean([r.mean_rho_hat for r in records])) if records else 0.0,
        aggregator_mode=config.aggregator.mode.value,
        prob_mode=config.prob_mode,
    )
    return records, report


def write_records(records, path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")
    return path


def write_report(report: EvaluationReport, path) -> Path:
    path = Path(path)
    path.write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    return path
