"""Image scoring against per-class prompt sets, and corpus evaluation."""

import json
import math

import numpy as np
import pytest

from cgbc.classifier import (
    ClassifierConfig,
    ClassPromptSet,
    class_estimate,
    evaluate,
    score_image,
    write_records,
    write_report,
)
from cgbc.errors import CgbcError
from cgbc.softtrim import AggregatorConfig, AggregatorMode, aggregate
from cgbc.store import EmbeddingContainer, Role, sim_to_prob
from cgbc.synth import SyntheticDatasetSpec, make_synthetic


def unit_rows(rows):
    rows = np.asarray(rows, dtype=np.float64)
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def prompt_set(class_name, rows):
    rows = unit_rows(rows).astype(np.float32)
    names = tuple(f"{class_name}_p{i}" for i in range(rows.shape[0]))
    return ClassPromptSet(
        class_name=class_name,
        prompts=EmbeddingContainer(
            dim=rows.shape[1], count=rows.shape[0], names=names,
            role=Role.PROMPT, rows=rows, normalized=True,
        ),
    )


def two_class_setup():
    a = prompt_set("alpha", [[1.0, 0.0, 0.0], [0.9, 0.1, 0.0], [0.95, 0.0, 0.05]])
    b = prompt_set("beta", [[0.0, 1.0, 0.0], [0.1, 0.9, 0.0], [0.0, 0.95, 0.05]])
    return [a, b]


class TestScoreImage:
    def test_matches_direct_composition(self):
        """score_image is exactly sim_to_prob then aggregate, per class."""
        sets = two_class_setup()
        v = unit_rows([[0.8, 0.3, 0.1]])[0]
        cfg = ClassifierConfig(aggregator=AggregatorConfig(mode=AggregatorMode.SOFT_TRIM))
        rec = score_image("img", v, sets, cfg)
        for c, ps in enumerate(sets):
            sims = ps.prompts.rows.astype(np.float64) @ v
            expected = aggregate(sim_to_prob(sims), cfg.aggregator).mu_hat
            assert rec.class_scores[c] == pytest.approx(expected, abs=1e-12)

    def test_prior_mean_oracle(self):
        sets = two_class_setup()
        v = unit_rows([[0.0, 1.0, 0.0]])[0]
        cfg = ClassifierConfig(aggregator=AggregatorConfig(mode=AggregatorMode.PRIOR_MEAN))
        rec = score_image("img", v, sets, cfg)
        sims = sets[1].prompts.rows.astype(np.float64) @ v
        assert rec.class_scores[1] == pytest.approx(((np.clip(sims, -1, 1) + 1) / 2).mean())
        assert rec.predicted_index == 1
        assert rec.predicted_class == "beta"

    def test_tie_breaks_to_lowest_index(self):
        a = prompt_set("first", [[1.0, 0.0], [0.0, 1.0]])
        b = prompt_set("second", [[1.0, 0.0], [0.0, 1.0]])
        v = unit_rows([[1.0, 1.0]])[0]
        rec = score_image("img", v, [a, b], ClassifierConfig())
        assert rec.class_scores[0] == rec.class_scores[1]
        assert rec.predicted_index == 0

    def test_affine_probs_equal_scores(self):
        rec = score_image(
            "img", unit_rows([[1.0, 0.2, 0.0]])[0], two_class_setup(),
            ClassifierConfig(prob_mode="affine"),
        )
        assert rec.class_probs == rec.class_scores

    def test_softmax_probs_form_distribution(self):
        cfg = ClassifierConfig(prob_mode="softmax_over_classes", logit_scale=5.0)
        rec = score_image("img", unit_rows([[1.0, 0.2, 0.0]])[0], two_class_setup(), cfg)
        assert sum(rec.class_probs) == pytest.approx(1.0, abs=1e-12)
        assert all(0.0 < p < 1.0 for p in rec.class_probs)

    def test_softmax_matches_hand_formula(self):
        cfg = ClassifierConfig(prob_mode="softmax_over_classes", logit_scale=3.0)
        sets = two_class_setup()
        v = unit_rows([[0.7, 0.4, 0.1]])[0]
        rec = score_image("img", v, sets, cfg)
        logits = [3.0 * (2.0 * s - 1.0) for s in rec.class_scores]
        z = sum(math.exp(x) for x in logits)
        for p, x in zip(rec.class_probs, logits):
            assert p == pytest.approx(math.exp(x) / z, abs=1e-12)

    def test_softmax_argmax_matches_affine(self):
        rng = np.random.default_rng(7)
        sets = two_class_setup()
        for _ in range(50):
            v = rng.normal(size=3)
            v /= np.linalg.norm(v)
            ra = score_image("i", v, sets, ClassifierConfig(prob_mode="affine"))
            rs = score_image(
                "i", v, sets, ClassifierConfig(prob_mode="softmax_over_classes")
            )
            assert ra.predicted_index == rs.predicted_index

    def test_needs_two_classes(self):
        sets = two_class_setup()[:1]
        with pytest.raises(CgbcError, match="two"):
            score_image("img", np.array([1.0, 0.0, 0.0]), sets, ClassifierConfig())

    def test_dim_mismatch_rejected(self):
        with pytest.raises(CgbcError, match="dim"):
            score_image("img", np.array([1.0, 0.0]), two_class_setup(), ClassifierConfig())

    def test_duplicate_class_names_rejected(self):
        a = prompt_set("same", [[1.0, 0.0]])
        b = prompt_set("same", [[0.0, 1.0]])
        with pytest.raises(CgbcError, match="distinct"):
            score_image("img", np.array([1.0, 0.0]), [a, b], ClassifierConfig())

    def test_bad_prob_mode_rejected(self):
        with pytest.raises(ValueError, match="prob_mode"):
            ClassifierConfig(prob_mode="logits")


class TestClassEstimate:
    def test_exposes_weights_for_one_class(self):
        sets = two_class_setup()
        v = unit_rows([[1.0, 0.0, 0.0]])[0]
        cfg = AggregatorConfig(mode=AggregatorMode.SOFT_TRIM)
        est = class_estimate(v, sets[0], cfg)
        sims = sets[0].prompts.rows.astype(np.float64) @ v
        expected = aggregate(sim_to_prob(sims), cfg)
        assert est.mu_hat == expected.mu_hat
        np.testing.assert_array_equal(est.weights, expected.weights)


def synthetic_eval_pieces(noise_sigma=0.05, outlier_rate=0.0, seed=11):
    ds = make_synthetic(SyntheticDatasetSpec(
        num_classes=3, dim=32, prompts_per_class=8, images_per_class=5,
        outlier_rate=outlier_rate, noise_sigma=noise_sigma, margin=0.5, seed=seed,
    ))
    sets = [
        ClassPromptSet(class_name=name, prompts=p)
        for name, p in zip(ds.classes.names, ds.prompts)
    ]
    return ds, sets


class TestEvaluate:
    def test_clean_dataset_is_perfect(self):
        ds, sets = synthetic_eval_pieces()
        cfg = ClassifierConfig(aggregator=AggregatorConfig(mode=AggregatorMode.PRIOR_MEAN))
        records, report = evaluate(ds.images, sets, ds.labels, cfg)
        assert report.count == 15
        assert report.top1 == 1.0
        assert set(report.per_class_accuracy) == set(ds.classes.names)
        assert all(v == 1.0 for v in report.per_class_accuracy.values())

    def test_records_follow_container_order(self):
        ds, sets = synthetic_eval_pieces()
        records, _ = evaluate(ds.images, sets, ds.labels, ClassifierConfig())
        assert [r.image_name for r in records] == list(ds.images.names)

    def test_worker_pool_gives_identical_records(self):
        ds, sets = synthetic_eval_pieces(outlier_rate=0.25, noise_sigma=0.3)
        cfg = ClassifierConfig()
        serial, rs = evaluate(ds.images, sets, ds.labels, cfg)
        threaded, rt = evaluate(ds.images, sets, ds.labels, cfg, workers=4)
        assert rs.top1 == rt.top1
        for a, b in zip(serial, threaded):
            assert a.image_name == b.image_name
            assert a.class_scores == b.class_scores

    def test_missing_label_rejected(self):
        ds, sets = synthetic_eval_pieces()
        labels = dict(ds.labels)
        labels.pop(ds.images.names[0])
        with pytest.raises(CgbcError, match="label"):
            evaluate(ds.images, sets, labels, ClassifierConfig())

    def test_true_index_recorded(self):
        ds, sets = synthetic_eval_pieces()
        records, _ = evaluate(ds.images, sets, ds.labels, ClassifierConfig())
        for rec in records:
            assert rec.true_index == ds.labels[rec.image_name]

    def test_contaminated_rho_estimate_positive(self):
        ds, sets = synthetic_eval_pieces(outlier_rate=0.25, noise_sigma=0.1)
        _, report = evaluate(ds.images, sets, ds.labels, ClassifierConfig())
        assert report.mean_rho_hat > 0.05

    def test_report_serialization_is_deterministic(self, tmp_path):
        ds, sets = synthetic_eval_pieces()
        _, report = evaluate(ds.images, sets, ds.labels, ClassifierConfig())
        p1, p2 = tmp_path / "r1.json", tmp_path / "r2.json"
        write_report(report, p1)
        write_report(report, p2)
        assert p1.read_bytes() == p2.read_bytes()
        loaded = json.loads(p1.read_text())
        assert loaded["top1"] == report.top1
        assert loaded["aggregator_mode"] == "soft_trim"

    def test_records_jsonl_round_trip(self, tmp_path):
        ds, sets = synthetic_eval_pieces()
        records, _ = evaluate(ds.images, sets, ds.labels, ClassifierConfig())
        path = tmp_path / "records.jsonl"
        write_records(records, path)
        lines = path.read_text().splitlines()
        assert len(lines) == len(records)
        first = json.loads(lines[0])
        assert first["image_name"] == records[0].image_name
        assert first["predicted_class"] == records[0].predicted_class
        assert first["class_scores"] == pytest.approx(list(records[0].class_scores))

    def test_soft_trim_survives_contamination_better(self):
        """With planted outlier prompts, soft trimming should not lose to the
        plain mean on the same data."""
        ds, sets = synthetic_eval_pieces(outlier_rate=0.25, noise_sigma=0.35, seed=29)
        _, soft = evaluate(
            ds.images, sets, ds.labels,
            ClassifierConfig(aggregator=AggregatorConfig(mode=AggregatorMode.SOFT_TRIM)),
        )
        _, mean = evaluate(
            ds.images, sets, ds.labels,
            ClassifierConfig(aggregator=AggregatorConfig(mode=AggregatorMode.PRIOR_MEAN)),
        )
        assert soft.top1 >= mean.top1
