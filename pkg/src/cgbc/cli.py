"""Command-line front end for the concept pipeline.

Eight subcommands cover the pipeline stages plus the study tools:

  neighbors  rank each class's most similar classes
  gen        fill concept pools from an LLM (live, record, or replay)
  compose    sample composite concepts from each pool
  select     pick a diverse prompt subset and write prompt containers
  classify   score images against the selected prompts
  evaluate   classify plus accuracy report against known labels
  simulate   contamination sweep of the robust aggregator
  diagnose   moment and tail diagnostics for a score sample

Exit codes: 0 on success, 1 for usage or configuration problems, 2 for data
problems (missing files, malformed inputs, replay misses). All outputs are
deterministic functions of the inputs; nothing embeds a timestamp.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classifier import (
    PROB_MODES,
    ClassifierConfig,
    ClassPromptSet,
    evaluate,
    score_image,
    write_records,
    write_report,
)
from .concepts import ConceptPool, compose, generate_atoms, render_prompt
from .diagnostics import describe
from .dpp import build_kernel, greedy_map
from .errors import CgbcError
from .llm import LlmClient, LlmClientConfig
from .neighborhoods import build_neighborhoods
from .seeds import STREAM_COMPOSE, spawn
from .simulator import run_error_sweep, write_sweep_csv, write_sweep_summary
from .softtrim import AggregatorConfig, AggregatorMode
from .store import EmbeddingContainer, Role, load_container, save_container
from .synth import HashEmbedder

AGGREGATOR_NAMES = tuple(m.value for m in AggregatorMode)
PROMPT_STYLES = ("contrastive", "descriptive")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    top_h: int = 10
    atoms: int = 50
    per_call: int = 10
    atoms_per_prompt: int = 3
    num_combos: int = 500
    select_size: int = 16
    lam: float = 2.5
    slope: float = field(default_factory=lambda: math.exp(4.6))
    logit_scale: float = field(default_factory=lambda: math.exp(4.6))
    aggregator: str = "soft_trim"
    prob_mode: str = "affine"
    dpp: bool = True
    dedup_threshold: float = 0.9
    prompt_style: str = "contrastive"
    llm_model: str = "local-llm"
    llm_endpoint: str | None = None
    workers: int | None = None
    embedder: dict = field(default_factory=lambda: {"kind": "hash", "dim": 64, "salt": 0})

    def __post_init__(self):
        for name in ("top_h", "atoms", "per_call", "atoms_per_prompt",
                     "num_combos", "select_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.select_size > self.num_combos:
            raise ValueError(
                f"select_size ({self.select_size}) cannot exceed num_combos "
                f"({self.num_combos})"
            )
        if self.aggregator not in AGGREGATOR_NAMES:
            raise ValueError(
                f"aggregator must be one of {AGGREGATOR_NAMES}, got {self.aggregator!r}"
            )
        if self.prob_mode not in PROB_MODES:
            raise ValueError(f"prob_mode must be one of {PROB_MODES}")
        if self.prompt_style not in PROMPT_STYLES:
            raise ValueError(f"prompt_style must be one of {PROMPT_STYLES}")
        if not (self.lam > 0 and self.slope > 0 and self.logit_scale > 0):
            raise ValueError("lam, slope, and logit_scale must be positive")
        if not (0.0 < self.dedup_threshold <= 1.0):
            raise ValueError("dedup_threshold must lie in (0, 1]")
        if self.embedder.get("kind") != "hash":
            raise ValueError("embedder.kind must be 'hash' (real encoders ship "
                             "containers instead)")


_CONFIG_KEYS = {f.name for f in dataclasses.fields(PipelineConfig)}


def load_pipeline_config(path) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ValueError("config file must hold a JSON object")
    unknown = sorted(set(raw) - _CONFIG_KEYS)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    return PipelineConfig(**raw)


_OVERRIDE_FIELDS = (
    "seed", "top_h", "atoms", "per_call", "atoms_per_prompt", "num_combos",
    "select_size", "lam", "slope", "aggregator", "prob_mode", "llm_model",
    "llm_endpoint", "workers",
)


def apply_overrides(cfg: PipelineConfig, args) -> PipelineConfig:
    updates = {}
    for name in _OVERRIDE_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            updates[name] = value
    dpp = getattr(args, "dpp", None)
    if dpp is not None:
        updates["dpp"] = dpp == "on"
    style = getattr(args, "style", None)
    if style is not None:
        updates["prompt_style"] = style
    return dataclasses.replace(cfg, **updates) if updates else cfg


def build_embedder(cfg: PipelineConfig) -> HashEmbedder:
    return HashEmbedder(dim=int(cfg.embedder.get("dim", 64)),
                        salt=int(cfg.embedder.get("salt", 0)))


def _aggregator_config(cfg: PipelineConfig) -> AggregatorConfig:
    return AggregatorConfig(
        mode=AggregatorMode(cfg.aggregator), lam=cfg.lam, slope=cfg.slope
    )


def _classifier_config(cfg: PipelineConfig) -> ClassifierConfig:
    return ClassifierConfig(
        aggregator=_aggregator_config(cfg), prob_mode=cfg.prob_mode,
        logit_scale=cfg.logit_scale,
    )


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(payload, path: Path) -> Path:
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    return path


def _load_json(path) -> object:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", name).strip("_").lower() or "class"


def cmd_neighbors(args, cfg: PipelineConfig) -> int:
    classes = load_container(args.classes)
    table = build_neighborhoods(classes, top_h=cfg.top_h)
    path = table.write_report(_out_dir(args) / "neighbors.json")
    print(f"wrote {path}")
    return 0


def cmd_gen(args, cfg: PipelineConfig) -> int:
    classes = load_container(args.classes)
    table = build_neighborhoods(classes, top_h=cfg.top_h)
    if args.replay:
        mode, fixture = "replay", args.replay
    elif args.record:
        mode, fixture = "record", args.record
    else:
        mode, fixture = "live", None
    client = LlmClient(LlmClientConfig(
        model=cfg.llm_model, mode=mode, endpoint=cfg.llm_endpoint,
        fixture_path=fixture, per_call=cfg.per_call,
    ))
    embed = build_embedder(cfg)
    pools = []
    for name in classes.names:
        neighbor_names = [n for n, _ in table.neighbors[name]]
        pool = generate_atoms(
            name, neighbor_names, client, embed,
            capacity=cfg.atoms, per_call=cfg.per_call,
            threshold=cfg.dedup_threshold, style=cfg.prompt_style,
        )
        pools.append({"class": name, "atoms": list(pool.atoms)})
    path = _write_json(pools, _out_dir(args) / "pools.json")
    print(f"wrote {path}")
    return 0


def _require_entries(data, kind: str, keys) -> list:
    if not isinstance(data, list) or not data:
        raise CgbcError(f"{kind} file must hold a non-empty JSON array")
    for entry in data:
        if not isinstance(entry, dict) or any(k not in entry for k in keys):
            raise CgbcError(f"each {kind} entry needs keys {sorted(keys)}")
    return data


def cmd_compose(args, cfg: PipelineConfig) -> int:
    pools = _require_entries(_load_json(args.pools), "pools", ("class", "atoms"))
    entries = []
    for idx, entry in enumerate(pools):
        pool = ConceptPool(
            class_name=entry["class"], capacity=len(entry["atoms"]),
            atoms=list(entry["atoms"]),
        )
        # distinct per-class stream so adding a class never reshuffles others
        class_seed = int(spawn(cfg.seed, STREAM_COMPOSE, idx).integers(0, 2 ** 63 - 1))
        composites = compose(pool, cfg.atoms_per_prompt, cfg.num_combos, class_seed)
        entries.append({
            "class": entry["class"],
            "composites": [
                {"atom_indices": list(c.atom_indices), "text": c.text}
                for c in composites
            ],
        })
    path = _write_json(entries, _out_dir(args) / "composites.json")
    print(f"wrote {path}")
    return 0


def cmd_select(args, cfg: PipelineConfig) -> int:
    data = _require_entries(
        _load_json(args.composites), "composites", ("class", "composites")
    )
    embed = build_embedder(cfg)
    out = _out_dir(args)
    selection_entries = []
    index_entries = []
    for entry in data:
        name = entry["class"]
        comps = entry["composites"]
        if cfg.select_size > len(comps):
            raise CgbcError(
                f"select_size {cfg.select_size} exceeds the {len(comps)} available "
                f"composites for class {name!r}"
            )
        texts = [render_prompt(name, c["text"]) for c in comps]
        vecs = embed(texts)
        slug = _slug(name)
        candidates = EmbeddingContainer(
            dim=vecs.shape[1], count=vecs.shape[0],
            names=tuple(f"{slug}_cand{i:04d}" for i in range(vecs.shape[0])),
            role=Role.PROMPT, rows=vecs.astype(np.float32), normalized=True,
        )
        if cfg.dpp:
            sel = greedy_map(build_kernel(candidates), cfg.select_size)
            chosen = [int(i) for i in sel.indices]
            gains = [float(g) for g in sel.marginal_gains]
        else:
            chosen = list(range(cfg.select_size))
            gains = [None] * cfg.select_size
        picked = EmbeddingContainer(
            dim=candidates.dim, count=len(chosen),
            names=tuple(candidates.names[i] for i in chosen),
            role=Role.PROMPT, rows=candidates.rows[chosen], normalized=True,
        )
        manifest_name = f"prompts_{slug}.manifest.json"
        save_container(picked, out / manifest_name)
        selection_entries.append({
            "class": name,
            "requested": cfg.select_size,
            "selected": [
                {
                    "index": i,
                    "concept_text": comps[i]["text"],
                    "prompt_text": texts[i],
                    "marginal_gain": g,
                }
                for i, g in zip(chosen, gains)
            ],
        })
        index_entries.append({"class": name, "manifest": manifest_name})
    _write_json(selection_entries, out / "selection.json")
    path = _write_json(index_entries, out / "prompt_index.json")
    print(f"wrote {path}")
    return 0


def _load_prompt_sets(index_path) -> list:
    index_path = Path(index_path)
    entries = _require_entries(
        _load_json(index_path), "prompt index", ("class", "manifest")
    )
    return [
        ClassPromptSet(
            class_name=e["class"],
            prompts=load_container(index_path.parent / e["manifest"]),
        )
        for e in entries
    ]


def cmd_classify(args, cfg: PipelineConfig) -> int:
    images = load_container(args.images)
    prompt_sets = _load_prompt_sets(args.prompts_index)
    ccfg = _classifier_config(cfg)
    rows = images.rows.astype(np.float64)
    records = [
        score_image(images.names[i], rows[i], prompt_sets, ccfg)
        for i in range(images.count)
    ]
    path = write_records(records, _out_dir(args) / "records.jsonl")
    print(f"wrote {path}")
    return 0


def cmd_evaluate(args, cfg: PipelineConfig) -> int:
    images = load_container(args.images)
    prompt_sets = _load_prompt_sets(args.prompts_index)
    labels_raw = _load_json(args.labels)
    if not isinstance(labels_raw, dict):
        raise CgbcError("labels file must map image name to class index")
    labels = {k: int(v) for k, v in labels_raw.items()}
    records, report = evaluate(
        images, prompt_sets, labels, _classifier_config(cfg), workers=cfg.workers
    )
    out = _out_dir(args)
    write_records(records, out / "records.jsonl")
    path = write_report(report, out / "report.json")
    print(f"wrote {path} (top1 {report.top1:.4f})")
    return 0


def _parse_float_list(text: str):
    return tuple(float(x) for x in text.split(",") if x.strip())


def _parse_int_list(text: str):
    return tuple(int(x) for x in text.split(",") if x.strip())


def cmd_simulate(args, cfg: PipelineConfig) -> int:
    result = run_error_sweep(
        outlier_rates=_parse_float_list(args.rhos),
        sample_sizes=_parse_int_list(args.sizes),
        seed=cfg.seed,
        trials=args.trials,
        lam=cfg.lam,
        slope=cfg.slope,
        sigma=args.sigma,
        mean=args.mean,
    )
    out = _out_dir(args)
    write_sweep_csv(result, out / "sweep.csv")
    path = write_sweep_summary(result, out / "summary.json")
    print(f"wrote {path}")
    return 0


def cmd_diagnose(args, cfg: PipelineConfig) -> int:
    raw = _load_json(args.scores)
    if (not isinstance(raw, list)
            or not all(isinstance(x, (int, float)) and not isinstance(x, bool)
                       for x in raw)):
        raise CgbcError("scores file must hold a JSON array of numbers")
    report = describe(np.asarray(raw, dtype=np.float64))
    path = _write_json(report.to_dict(), _out_dir(args) / "diagnostics.json")
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON pipeline configuration")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--top-h", dest="top_h", type=int)
    common.add_argument("--atoms", type=int)
    common.add_argument("--per-call", dest="per_call", type=int)
    common.add_argument("--atoms-per-prompt", dest="atoms_per_prompt", type=int)
    common.add_argument("--num-combos", dest="num_combos", type=int)
    common.add_argument("--select-size", dest="select_size", type=int)
    common.add_argument("--lambda", dest="lam", type=float)
    common.add_argument("--slope", type=float)
    common.add_argument("--aggregator", choices=AGGREGATOR_NAMES)
    common.add_argument("--prob-mode", dest="prob_mode", choices=PROB_MODES)
    common.add_argument("--dpp", choices=("on", "off"))
    common.add_argument("--llm-endpoint", dest="llm_endpoint")
    common.add_argument("--llm-model", dest="llm_model")
    common.add_argument("--workers", type=int)

    parser = argparse.ArgumentParser(
        prog="cgbc",
        description="Concept-guided zero-shot classification pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("neighbors", parents=[common],
                       help="rank similar classes for each class")
    p.add_argument("--classes", required=True)
    p.set_defaults(func=cmd_neighbors)

    p = sub.add_parser("gen", parents=[common], help="fill concept pools")
    p.add_argument("--classes", required=True)
    p.add_argument("--replay", help="replay fixture path")
    p.add_argument("--record", help="record fixture path")
    p.add_argument("--style", choices=PROMPT_STYLES)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("compose", parents=[common], help="sample composite concepts")
    p.add_argument("--pools", required=True)
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("select", parents=[common], help="pick a diverse prompt subset")
    p.add_argument("--composites", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("classify", parents=[common], help="score images")
    p.add_argument("--images", required=True)
    p.add_argument("--prompts-index", dest="prompts_index", required=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", parents=[common],
                       help="classify and report accuracy")
    p.add_argument("--images", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--prompts-index", dest="prompts_index", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", parents=[common],
                       help="contamination sweep of the aggregator")
    p.add_argument("--rhos", default="0,0.05,0.1,0.2",
                   help="comma-separated contamination rates")
    p.add_argument("--sizes", default="25,50,100,400,1600",
                   help="comma-separated score-set sizes")
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--mean", type=float, default=0.5)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("diagnose", parents=[common],
                       help="moment diagnostics for a score sample")
    p.add_argument("--scores", required=True)
    p.set_defaults(func=cmd_diagnose)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1

    try:
        cfg = apply_overrides(load_pipeline_config(args.config), args)
    except (ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    try:
        return args.func(args, cfg)
    except (CgbcError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
