"""Synthetic test assets: hash embedders, planted-outlier datasets, and the
packaged demo replay fixture.

Everything here is deterministic given a seed so test expectations can be
frozen. The hash embedder stands in for a real text encoder wherever the
pipeline needs one offline; distinct texts map to independent random unit
vectors, so they are nearly orthogonal at moderate dimensions.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from itertools import product
from pathlib import Path

import numpy as np

from .concepts import render_contrastive_prompt
from .llm import request_digest
from .neighborhoods import build_neighborhoods
from .seeds import STREAM_CLASS, STREAM_SYNTH, spawn
from .store import EmbeddingContainer, Role, save_container

OUTLIER_NAME_SUFFIX = "_outlier"


class HashEmbedder:
    """Deterministic text-to-unit-vector stub.

    The vector for a text depends only on (salt, text) via SHA-256, so two
    embedder instances with one salt agree across processes and platforms.
    """

    def __init__(self, dim: int, salt: int = 0):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.salt = int(salt)

    def __call__(self, texts) -> np.ndarray:
        out = np.empty((len(texts), self.dim), dtype=np.float64)
        for i, text in enumerate(texts):
            h = hashlib.sha256(f"{self.salt}|{text}".encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(h[:8], "little"))
            v = rng.normal(size=self.dim)
            out[i] = v / np.linalg.norm(v)
        return out


def _to_container(rows64: np.ndarray, names, role: Role) -> EmbeddingContainer:
    rows = rows64 / np.linalg.norm(rows64, axis=1, keepdims=True)
    return EmbeddingContainer(
        dim=rows.shape[1], count=rows.shape[0], names=tuple(names), role=role,
        rows=rows.astype(np.float32), normalized=True,
    )


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    num_classes: int
    dim: int
    prompts_per_class: int
    images_per_class: int
    outlier_rate: float
    noise_sigma: float
    margin: float          # anchors kept at pairwise cosine <= 1 - margin
    seed: int

    def __post_init__(self):
        if not (0.0 <= self.outlier_rate < 1.0):
            raise ValueError(f"outlier_rate must lie in [0, 1), got {self.outlier_rate}")
        if self.num_classes < 2 or self.dim < 2:
            raise ValueError("need num_classes >= 2 and dim >= 2")
        if self.prompts_per_class < 1 or self.images_per_class < 1:
            raise ValueError("prompts_per_class and images_per_class must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not (0.0 <= self.margin < 1.0):
            raise ValueError("margin must lie in [0, 1)")


@dataclass(frozen=True)
class SyntheticDataset:
    classes: EmbeddingContainer
    prompts: tuple   # one prompt container per class
    images: EmbeddingContainer
    labels: dict     # image name -> class index

    @property
    def outlier_masks(self):
        """Planted-outlier indicator per class, recovered from prompt names."""
        return tuple(
            np.array([n.endswith(OUTLIER_NAME_SUFFIX) for n in p.names], dtype=bool)
            for p in self.prompts
        )


def _sample_anchors(rng, k, dim, cos_cap, max_attempts=1000):
    anchors = []
    for _ in range(k):
        for _ in range(max_attempts):
            v = rng.normal(size=dim)
            v /= np.linalg.norm(v)
            if all(float(np.dot(v, a)) <= cos_cap for a in anchors):
                anchors.append(v)
                break
        else:
            raise ValueError(
                f"could not place {k} class anchors with pairwise cosine <= {cos_cap:.3g} "
                f"in dim {dim}"
            )
    return np.stack(anchors)


def make_synthetic(spec: SyntheticDatasetSpec) -> SyntheticDataset:
    """Planted-outlier dataset with known labels.

    Clean prompts and images sit near their class anchor (anchor plus
    Gaussian noise, renormalized); a fixed fraction of each class's prompts
    is replaced by random unit vectors. Those planted prompts carry an
    "_outlier" name suffix so tests can check they get down-weighted.
    """
    anchor_rng = spawn(spec.seed, STREAM_SYNTH)
    anchors = _sample_anchors(anchor_rng, spec.num_classes, spec.dim, 1.0 - spec.margin)
    class_names = [f"class{c:02d}" for c in range(spec.num_classes)]
    classes = _to_container(anchors, class_names, Role.CLASS)

    n_out = int(round(spec.outlier_rate * spec.prompts_per_class))
    n_clean = spec.prompts_per_class - n_out
    prompt_containers = []
    image_rows = []
    image_names = []
    labels = {}
    for c in range(spec.num_classes):
        rng = spawn(spec.seed, STREAM_SYNTH, c)
        clean = anchors[c] + spec.noise_sigma * rng.normal(size=(n_clean, spec.dim))
        outliers = rng.normal(size=(n_out, spec.dim))
        names = [f"{class_names[c]}_p{j:02d}" for j in range(n_clean)] + [
            f"{class_names[c]}_p{n_clean + j:02d}{OUTLIER_NAME_SUFFIX}" for j in range(n_out)
        ]
        prompt_containers.append(
            _to_container(np.vstack([clean, outliers]) if n_out else clean, names, Role.PROMPT)
        )
        imgs = anchors[c] + spec.noise_sigma * rng.normal(size=(spec.images_per_class, spec.dim))
        image_rows.append(imgs)
        for j in range(spec.images_per_class):
            name = f"{class_names[c]}_img{j:03d}"
            image_names.append(name)
            labels[name] = c

    images = _to_container(np.vstack(image_rows), image_names, Role.IMAGE)
    return SyntheticDataset(
        classes=classes, prompts=tuple(prompt_containers), images=images, labels=labels
    )


def write_synthetic_workspace(spec: SyntheticDatasetSpec, out_dir) -> dict:
    """Write containers plus labels JSON; returns the paths keyed by purpose."""
    ds = make_synthetic(spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"classes": save_container(ds.classes, out / "classes.manifest.json")}
    for i, prompts in enumerate(ds.prompts):
        paths[f"prompts_{i}"] = save_container(
            prompts, out / f"prompts_class{i:02d}.manifest.json"
        )
    paths["images"] = save_container(ds.images, out / "images.manifest.json")
    labels_path = out / "labels.json"
    labels_path.write_text(
        json.dumps(ds.labels, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    paths["labels"] = labels_path
    return paths


# ---------------------------------------------------------------------------
# Packaged demo fixture: enough recorded replies to drive concept generation,
# composition, selection, and classification end to end with no network.

_DEMO_ADJECTIVES = (
    "glossy", "striped", "spotted", "slender", "rounded", "jagged",
    "pale", "vivid", "matte", "freckled", "banded", "tufted",
)
_DEMO_PARTS = (
    "snout", "tail", "crest", "paws", "plumage", "hide",
    "whiskers", "ears", "muzzle", "markings", "feet", "chest",
)


@dataclass(frozen=True)
class DemoInputs:
    class_names: tuple
    dim: int
    seed: int
    top_h: int
    capacity: int
    per_call: int
    calls_per_class: int
    atoms_per_prompt: int
    num_combos: int
    select_size: int
    model: str


def demo_pipeline_inputs() -> DemoInputs:
    return DemoInputs(
        class_names=("beagle", "basset hound", "tabby cat", "canary"),
        dim=64,
        seed=20240701,
        top_h=2,
        capacity=20,
        per_call=10,
        calls_per_class=3,
        atoms_per_prompt=3,
        num_combos=60,
        select_size=16,
        model="demo-model",
    )


def demo_class_container(inputs: DemoInputs = None) -> EmbeddingContainer:
    inputs = inputs or demo_pipeline_inputs()
    embed = HashEmbedder(dim=inputs.dim, salt=inputs.seed)
    return _to_container(embed(list(inputs.class_names)), inputs.class_names, Role.CLASS)


def _demo_concepts_for(class_index: int, inputs: DemoInputs):
    """calls_per_class lists of per_call concept texts, with one deliberate
    repeat per follow-up call to exercise dedup."""
    combos = [f"{a} {p}" for a, p in product(_DEMO_ADJECTIVES, _DEMO_PARTS)]
    rng = spawn(inputs.seed, STREAM_CLASS, class_index)
    order = rng.permutation(len(combos))
    calls = []
    for call in range(inputs.calls_per_class):
        start = call * inputs.per_call
        texts = [combos[i] for i in order[start: start + inputs.per_call]]
        if call > 0:
            texts[0] = combos[order[0]]  # repeat the first atom from call 0
        calls.append(texts)
    return calls


def _demo_reply(texts, call_index: int) -> str:
    lines = "\n".join(f"The final concept is: {t}" for t in texts)
    preamble = "Here are the requested concepts.\n" if call_index % 2 else ""
    return f"{preamble}<concepts begin>\n{lines}\n</concepts end>"


def regenerate_demo_fixture(inputs: DemoInputs = None) -> str:
    """Rebuild the packaged replay fixture text from first principles.

    The digests are computed through the same rendering path the pipeline
    uses, so a template change shows up as a fixture diff immediately.
    """
    inputs = inputs or demo_pipeline_inputs()
    classes = demo_class_container(inputs)
    table = build_neighborhoods(classes, top_h=inputs.top_h)
    entries = []
    for c, name in enumerate(inputs.class_names):
        neighbors = [n for n, _ in table.neighbors[name]]
        system, user = render_contrastive_prompt(name, neighbors, count=inputs.per_call)
        digest = request_digest(system, user, inputs.model)
        for call_index, texts in enumerate(_demo_concepts_for(c, inputs)):
            entries.append(
                {"digest": digest, "response": _demo_reply(texts, call_index)}
            )
    return json.dumps(entries, indent=2, ensure_ascii=False) + "\n"


def demo_fixture_path() -> Path:
    import importlib.resources as res

    return Path(str(res.files("cgbc") / "assets" / "demo_llm_fixture.json"))
