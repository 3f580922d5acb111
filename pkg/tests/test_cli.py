"""Command-line pipeline: subcommands, config plumbing, exit codes."""

import json
import math

import numpy as np
import pytest

from cgbc.cli import PipelineConfig, load_pipeline_config, main
from cgbc.diagnostics import describe
from cgbc.store import Role, load_container, save_container
from cgbc.synth import (
    SyntheticDatasetSpec,
    demo_class_container,
    demo_fixture_path,
    demo_pipeline_inputs,
    write_synthetic_workspace,
)


def synth_spec():
    return SyntheticDatasetSpec(
        num_classes=3, dim=32, prompts_per_class=8, images_per_class=5,
        outlier_rate=0.0, noise_sigma=0.05, margin=0.5, seed=11,
    )


@pytest.fixture()
def workspace(tmp_path):
    return write_synthetic_workspace(synth_spec(), tmp_path / "data")


def demo_config(tmp_path):
    inputs = demo_pipeline_inputs()
    cfg = {
        "seed": inputs.seed,
        "top_h": inputs.top_h,
        "atoms": inputs.capacity,
        "per_call": inputs.per_call,
        "atoms_per_prompt": inputs.atoms_per_prompt,
        "num_combos": inputs.num_combos,
        "select_size": inputs.select_size,
        "llm_model": inputs.model,
        "embedder": {"kind": "hash", "dim": inputs.dim, "salt": inputs.seed},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path


class TestConfig:
    def test_defaults(self):
        cfg = load_pipeline_config(None)
        assert cfg.top_h == 10
        assert cfg.atoms == 50
        assert cfg.per_call == 10
        assert cfg.atoms_per_prompt == 3
        assert cfg.num_combos == 500
        assert cfg.select_size == 16
        assert cfg.lam == 2.5
        assert cfg.slope == pytest.approx(math.exp(4.6))
        assert cfg.aggregator == "soft_trim"
        assert cfg.prob_mode == "affine"
        assert cfg.dpp is True

    def test_file_overrides(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"top_h": 3, "select_size": 8, "num_combos": 40}))
        cfg = load_pipeline_config(p)
        assert cfg.top_h == 3 and cfg.select_size == 8 and cfg.num_combos == 40

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"max_atoms": 9}))
        with pytest.raises(ValueError, match="max_atoms"):
            load_pipeline_config(p)

    def test_select_size_must_fit_combo_budget(self):
        with pytest.raises(ValueError, match="select_size"):
            PipelineConfig(select_size=600, num_combos=500)

    def test_bad_aggregator_name(self):
        with pytest.raises(ValueError, match="aggregator"):
            PipelineConfig(aggregator="trimmed")


class TestExitCodes:
    def test_no_subcommand_is_usage_error(self, capsys):
        assert main([]) == 1

    def test_unknown_flag_is_usage_error(self, capsys):
        assert main(["neighbors", "--bogus"]) == 1

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0

    def test_missing_input_file_is_data_error(self, tmp_path, capsys):
        rc = main([
            "neighbors", "--classes", str(tmp_path / "nope.manifest.json"),
            "--out", str(tmp_path),
        ])
        assert rc == 2

    def test_bad_config_is_usage_error(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"whatever": 1}))
        rc = main([
            "neighbors", "--classes", str(tmp_path / "x.json"),
            "--out", str(tmp_path), "--config", str(cfg),
        ])
        assert rc == 1


class TestNeighbors:
    def test_writes_report(self, workspace, tmp_path, capsys):
        out = tmp_path / "out"
        rc = main([
            "neighbors", "--classes", str(workspace["classes"]),
            "--out", str(out), "--top-h", "2",
        ])
        assert rc == 0
        data = json.loads((out / "neighbors.json").read_text())
        assert [e["class"] for e in data] == ["class00", "class01", "class02"]
        assert all(len(e["neighbors"]) == 2 for e in data)

    def test_deterministic_bytes(self, workspace, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main([
                "neighbors", "--classes", str(workspace["classes"]),
                "--out", str(out), "--top-h", "2",
            ]) == 0
        assert (a / "neighbors.json").read_bytes() == (b / "neighbors.json").read_bytes()


def run_demo_gen(tmp_path, out_name="gen"):
    cfgp = demo_config(tmp_path)
    classes_path = tmp_path / "demo_classes.manifest.json"
    save_container(demo_class_container(), classes_path)
    out = tmp_path / out_name
    rc = main([
        "gen", "--classes", str(classes_path), "--out", str(out),
        "--config", str(cfgp), "--replay", str(demo_fixture_path()),
    ])
    return rc, out, cfgp, classes_path


class TestGen:
    def test_pools_from_replay(self, tmp_path, capsys):
        rc, out, _, _ = run_demo_gen(tmp_path)
        assert rc == 0
        pools = json.loads((out / "pools.json").read_text())
        inputs = demo_pipeline_inputs()
        assert [p["class"] for p in pools] == list(inputs.class_names)
        for p in pools:
            assert len(p["atoms"]) == inputs.capacity
            assert len(set(p["atoms"])) == inputs.capacity

    def test_wrong_model_misses_replay(self, tmp_path, capsys):
        cfgp = demo_config(tmp_path)
        cfg = json.loads(cfgp.read_text())
        cfg["llm_model"] = "other-model"
        cfgp.write_text(json.dumps(cfg))
        classes_path = tmp_path / "demo_classes.manifest.json"
        save_container(demo_class_container(), classes_path)
        rc = main([
            "gen", "--classes", str(classes_path), "--out", str(tmp_path / "g"),
            "--config", str(cfgp), "--replay", str(demo_fixture_path()),
        ])
        assert rc == 2


class TestComposeSelect:
    @pytest.fixture()
    def gen_out(self, tmp_path, capsys):
        rc, out, cfgp, classes = run_demo_gen(tmp_path)
        assert rc == 0
        return out, cfgp

    def test_compose_counts_and_shape(self, gen_out, capsys):
        out, cfgp = gen_out
        rc = main([
            "compose", "--pools", str(out / "pools.json"),
            "--out", str(out), "--config", str(cfgp),
        ])
        assert rc == 0
        data = json.loads((out / "composites.json").read_text())
        inputs = demo_pipeline_inputs()
        for entry in data:
            assert len(entry["composites"]) == inputs.num_combos
            for comp in entry["composites"]:
                idx = comp["atom_indices"]
                assert idx == sorted(idx) and len(set(idx)) == inputs.atoms_per_prompt
                assert " or " in comp["text"]

    def test_seed_flag_changes_sampling(self, gen_out, capsys):
        out, cfgp = gen_out
        main(["compose", "--pools", str(out / "pools.json"), "--out", str(out),
              "--config", str(cfgp)])
        first = (out / "composites.json").read_text()
        main(["compose", "--pools", str(out / "pools.json"), "--out", str(out),
              "--config", str(cfgp), "--seed", "999"])
        assert (out / "composites.json").read_text() != first

    def select_after_compose(self, out, cfgp, extra=()):
        assert main([
            "compose", "--pools", str(out / "pools.json"),
            "--out", str(out), "--config", str(cfgp),
        ]) == 0
        return main([
            "select", "--composites", str(out / "composites.json"),
            "--out", str(out), "--config", str(cfgp), *extra,
        ])

    def test_select_dpp(self, gen_out, capsys):
        out, cfgp = gen_out
        assert self.select_after_compose(out, cfgp) == 0
        data = json.loads((out / "selection.json").read_text())
        inputs = demo_pipeline_inputs()
        index = json.loads((out / "prompt_index.json").read_text())
        assert [e["class"] for e in index] == list(inputs.class_names)
        for entry, idx_entry in zip(data, index):
            assert entry["requested"] == inputs.select_size
            chosen = [s["index"] for s in entry["selected"]]
            assert len(chosen) == len(set(chosen)) == inputs.select_size
            gains = [s["marginal_gain"] for s in entry["selected"]]
            assert all(gains[i] >= gains[i + 1] - 1e-9 for i in range(len(gains) - 1))
            container = load_container(out / idx_entry["manifest"])
            assert container.count == inputs.select_size
            assert container.role == Role.PROMPT and container.normalized

    def test_select_dpp_off_takes_prefix(self, gen_out, capsys):
        out, cfgp = gen_out
        assert self.select_after_compose(out, cfgp, ("--dpp", "off")) == 0
        data = json.loads((out / "selection.json").read_text())
        for entry in data:
            chosen = [s["index"] for s in entry["selected"]]
            assert chosen == list(range(demo_pipeline_inputs().select_size))

    def test_select_size_exceeding_pool_is_data_error(self, gen_out, capsys):
        """A select size that passes config validation can still exceed what
        the composites file actually holds; that is a data error."""
        out, cfgp = gen_out
        rc = self.select_after_compose(
            out, cfgp, ("--select-size", "61", "--num-combos", "100")
        )
        assert rc == 2


def write_prompt_index(workspace, tmp_path):
    index = [
        {"class": f"class{i:02d}", "manifest": f"prompts_class{i:02d}.manifest.json"}
        for i in range(3)
    ]
    path = workspace["classes"].parent / "prompt_index.json"
    path.write_text(json.dumps(index), encoding="utf-8")
    return path


class TestClassifyEvaluate:
    def test_classify_writes_records(self, workspace, tmp_path, capsys):
        index = write_prompt_index(workspace, tmp_path)
        out = tmp_path / "cls"
        rc = main([
            "classify", "--images", str(workspace["images"]),
            "--prompts-index", str(index), "--out", str(out),
        ])
        assert rc == 0
        lines = (out / "records.jsonl").read_text().splitlines()
        assert len(lines) == 15
        rec = json.loads(lines[0])
        assert rec["true_index"] is None
        assert rec["predicted_class"].startswith("class")

    def test_evaluate_clean_dataset_perfect(self, workspace, tmp_path, capsys):
        index = write_prompt_index(workspace, tmp_path)
        out = tmp_path / "ev"
        rc = main([
            "evaluate", "--images", str(workspace["images"]),
            "--labels", str(workspace["labels"]),
            "--prompts-index", str(index), "--out", str(out),
            "--aggregator", "prior_mean",
        ])
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert report["top1"] == 1.0
        assert report["aggregator_mode"] == "prior_mean"
        assert len((out / "records.jsonl").read_text().splitlines()) == 15

    def test_evaluate_aggregator_flag_changes_records(self, workspace, tmp_path, capsys):
        index = write_prompt_index(workspace, tmp_path)
        outs = {}
        for mode in ("prior_mean", "soft_trim"):
            out = tmp_path / mode
            assert main([
                "evaluate", "--images", str(workspace["images"]),
                "--labels", str(workspace["labels"]),
                "--prompts-index", str(index), "--out", str(out),
                "--aggregator", mode,
            ]) == 0
            outs[mode] = json.loads((out / "report.json").read_text())
        assert outs["prior_mean"]["aggregator_mode"] == "prior_mean"
        assert outs["soft_trim"]["aggregator_mode"] == "soft_trim"

    def test_missing_labels_file_is_data_error(self, workspace, tmp_path, capsys):
        index = write_prompt_index(workspace, tmp_path)
        rc = main([
            "evaluate", "--images", str(workspace["images"]),
            "--labels", str(tmp_path / "nolabels.json"),
            "--prompts-index", str(index), "--out", str(tmp_path / "x"),
        ])
        assert rc == 2


class TestSimulateDiagnose:
    def test_simulate_writes_grid(self, tmp_path, capsys):
        out = tmp_path / "sim"
        rc = main([
            "simulate", "--out", str(out), "--rhos", "0,0.2",
            "--sizes", "25,50", "--trials", "40", "--seed", "3",
        ])
        assert rc == 0
        csv_text = (out / "sweep.csv").read_text()
        assert csv_text.splitlines()[0] == (
            "rho,M,slope,q95_err_soft,q95_err_mean,q95_err_median,mean_rho_hat"
        )
        assert len(csv_text.splitlines()) == 5
        summary = json.loads((out / "summary.json").read_text())
        assert set(summary["exponents"]) == {"0.0", "0.2"}

    def test_simulate_deterministic(self, tmp_path, capsys):
        args = ["simulate", "--rhos", "0.1", "--sizes", "25", "--trials", "30",
                "--seed", "9"]
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(args + ["--out", str(a)]) == 0
        assert main(args + ["--out", str(b)]) == 0
        assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()
        assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()

    def test_diagnose_matches_library(self, tmp_path, capsys):
        scores = [0.1, 0.2, 0.2, 0.3, 0.8, 0.4, 0.35, 0.25]
        src = tmp_path / "scores.json"
        src.write_text(json.dumps(scores))
        out = tmp_path / "diag"
        assert main(["diagnose", "--scores", str(src), "--out", str(out)]) == 0
        data = json.loads((out / "diagnostics.json").read_text())
        expected = describe(np.array(scores)).to_dict()
        assert data["mean"] == pytest.approx(expected["mean"])
        assert data["kurtosis"] == pytest.approx(expected["kurtosis"])
        assert data["flags"] == expected["flags"]

    def test_diagnose_rejects_non_numeric(self, tmp_path, capsys):
        src = tmp_path / "scores.json"
        src.write_text(json.dumps(["a", "b"]))
        assert main(["diagnose", "--scores", str(src), "--out", str(tmp_path / "d")]) == 2


class TestEndToEndReplay:
    def run_pipeline(self, tmp_path, tag):
        cfgp = demo_config(tmp_path)
        classes_path = tmp_path / f"classes_{tag}.manifest.json"
        save_container(demo_class_container(), classes_path)
        out = tmp_path / tag
        steps = [
            ["neighbors", "--classes", str(classes_path)],
            ["gen", "--classes", str(classes_path), "--replay", str(demo_fixture_path())],
            ["compose", "--pools", str(out / "pools.json")],
            ["select", "--composites", str(out / "composites.json")],
        ]
        for step in steps:
            rc = main(step + ["--out", str(out), "--config", str(cfgp)])
            assert rc == 0, step[0]
        return out

    def test_two_runs_byte_identical(self, tmp_path, capsys):
        a = self.run_pipeline(tmp_path, "a")
        b = self.run_pipeline(tmp_path, "b")
        names = sorted(p.name for p in a.iterdir())
        assert names == sorted(p.name for p in b.iterdir())
        for name in names:
            assert (a / name).read_bytes() == (b / name).read_bytes(), name
