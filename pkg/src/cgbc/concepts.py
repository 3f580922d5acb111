"""Concept atom generation and composition.

A class's concept pool is filled by repeatedly asking a chat model for short
visual attributes ("atoms"), parsing the delimited reply format, and
dropping near-duplicates by embedding similarity. Pools are then expanded
into composite concepts: random distinct index triples whose texts are
joined with " or ", which later become classification prompts of the form
"A photo of a <class> with <concept>.".
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import ConceptParseError
from .llm import LlmClient, request_digest

logger = logging.getLogger(__name__)

BLOCK_OPEN = "<concepts begin>"
BLOCK_CLOSE = "</concepts end>"
CONCEPT_PREFIX = "The final concept is: "
DEDUP_COSINE_MAX = 0.9

_FORMAT_SECTION = f"""IMPORTANT: Your response must follow this exact format:

{BLOCK_OPEN}
concept1
concept2
concept3
{BLOCK_CLOSE}

Rules:
- Start with {BLOCK_OPEN} and end with {BLOCK_CLOSE}
- Each concept should be on a new line
- Each concept MUST start with "{CONCEPT_PREFIX.rstrip()} "
- Ensure concepts are clear, specific, and relevant to the {{audience}}
- Avoid generic or ambiguous concepts
- Each concept should be unique and distinct from others
- Keep each concept brief (ideally ≤6 words), specific, and easy for CLIP to parse."""

CONTRASTIVE_SYSTEM = (
    "You are a visual concept proposer tasked with enhancing text descriptions "
    "for zero-shot image classification on the test dataset using CLIP.\n"
    "\n"
    "Given:\n"
    "- A core class from the test dataset\n"
    "- The set of other classes in the dataset\n"
    "\n"
    "Task:\n"
    "Propose concise, visually discriminative concepts to append to the text "
    'description (i.e., "A photo of {core class} with {your concept}") that help '
    "CLIP better distinguish the core class from the other classes.\n"
    "\n"
    "Guidelines:\n"
    "- Analyze the unique visual characteristics of the core class compared to "
    "other classes\n"
    "- Propose concepts that capture these discriminative visual features.\n"
    "- Ensure concepts are concrete, easily understandable by CLIP, and specific "
    "to the test dataset.\n"
    "- Each concept should enable CLIP to more accurately classify images of the "
    "core class while minimizing confusion with other classes.\n"
    "\n" + _FORMAT_SECTION.format(audience="core class")
)

DESCRIPTIVE_SYSTEM = (
    "You are a visual concept proposer tasked with enhancing text descriptions "
    "for zero-shot image classification on the test dataset using CLIP.\n"
    "\n"
    "Given:\n"
    "- A class from the test dataset\n"
    "\n"
    "Task:\n"
    "Propose descriptive concepts to append to the text description (i.e., "
    '"A photo of {core class} with {your concept}") that help CLIP better '
    "understand and recognize the core class.\n"
    "\n"
    "Guidelines:\n"
    "- Focus on the visual characteristics and attributes of the core class "
    "itself.\n"
    "- Generate descriptive concepts that capture various aspects, appearances, "
    "or contexts of the core class.\n"
    "- Ensure concepts are concrete, easily understandable by CLIP, and specific "
    "to the test dataset.\n"
    "- Think about different visual perspectives, settings, or attributes that "
    "describe the core class.\n"
    "\n" + _FORMAT_SECTION.format(audience="given class")
)


def render_contrastive_prompt(class_name: str, neighbors, count: int = 10):
    """(system, user) asking for concepts that separate class from neighbors."""
    user = (
        f"Core class: {class_name}. Other classes: {', '.join(neighbors)}. "
        f"Please generate {count} unique and visually discriminative concepts. "
        "Follow the required format and rules."
    )
    return CONTRASTIVE_SYSTEM, user


def render_descriptive_prompt(class_name: str, count: int = 10):
    """(system, user) asking for standalone visual descriptions of a class."""
    user = (
        f"Core class: {class_name}. Please generate {count} unique and "
        "descriptive concepts that capture different visual aspects of this class."
    )
    return DESCRIPTIVE_SYSTEM, user


def render_prompt(class_name: str, concept_text: str) -> str:
    return f"A photo of a {class_name} with {concept_text}."


def parse_concepts(raw_text: str):
    """Extract concept lines from a delimited reply block.

    Lenient about everything except the delimiters: prose outside the block
    is ignored, blank lines are dropped, and a line that does not carry the
    required prefix is kept as-is after trimming.
    """
    open_at = raw_text.find(BLOCK_OPEN)
    if open_at < 0:
        raise ConceptParseError(f"reply lacks {BLOCK_OPEN!r}", raw_text=raw_text)
    close_at = raw_text.find(BLOCK_CLOSE, open_at)
    if close_at < 0:
        raise ConceptParseError(f"reply lacks {BLOCK_CLOSE!r}", raw_text=raw_text)
    body = raw_text[open_at + len(BLOCK_OPEN): close_at]
    concepts = []
    for line in body.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith(CONCEPT_PREFIX):
            line = line[len(CONCEPT_PREFIX):].strip()
        if line:
            concepts.append(line)
    if not concepts:
        raise ConceptParseError("reply block contains no concepts", raw_text=raw_text)
    return concepts


@dataclass
class ConceptPool:
    class_name: str
    capacity: int
    atoms: list = field(default_factory=list)
    call_log: list = field(default_factory=list)  # (request digest, raw reply)
    _vecs: np.ndarray = field(default=None, repr=False, compare=False)


def dedup_insert(pool: ConceptPool, candidates, embed, threshold: float = DEDUP_COSINE_MAX):
    """Insert candidates whose embedding stays below the similarity threshold.

    Returns counts by outcome: inserted / duplicate / similar / capacity.
    Byte-identical texts are rejected outright so threshold=1.0 still blocks
    exact repeats.
    """
    if not (0.0 < threshold <= 1.0):
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    counts = {"inserted": 0, "duplicate": 0, "similar": 0, "capacity": 0}
    if not candidates:
        return counts
    existing = set(pool.atoms)
    vecs = np.asarray(embed(list(candidates)), dtype=np.float64)
    for text, v in zip(candidates, vecs):
        if len(pool.atoms) >= pool.capacity:
            counts["capacity"] += 1
            continue
        if text in existing:
            counts["duplicate"] += 1
            continue
        if pool._vecs is not None and pool._vecs.size:
            if float(np.max(pool._vecs @ v)) > threshold:
                counts["similar"] += 1
                continue
        pool.atoms.append(text)
        existing.add(text)
        row = v.reshape(1, -1)
        pool._vecs = row if pool._vecs is None else np.vstack([pool._vecs, row])
        counts["inserted"] += 1
    return counts


def generate_atoms(
    class_name: str,
    neighbors,
    client: LlmClient,
    embed,
    capacity: int = 50,
    per_call: int = 10,
    max_calls: int = 10,
    threshold: float = DEDUP_COSINE_MAX,
    style: str = "contrastive",
    max_parse_failures: int = 2,
) -> ConceptPool:
    """Fill a concept pool by repeated completions plus dedup.

    Unparseable replies are skipped and counted; more than
    max_parse_failures of them aborts the run since the endpoint is not
    honoring the reply contract.
    """
    if style == "contrastive":
        system, user = render_contrastive_prompt(class_name, neighbors, count=per_call)
    elif style == "descriptive":
        system, user = render_descriptive_prompt(class_name, count=per_call)
    else:
        raise ValueError(f"unknown style {style!r}")

    pool = ConceptPool(class_name=class_name, capacity=capacity)
    digest = request_digest(system, user, client.cfg.model)
    parse_failures = 0
    for _ in range(max_calls):
        if len(pool.atoms) >= capacity:
            break
        reply = client.complete(system, user)
        pool.call_log.append((digest, reply))
        try:
            candidates = parse_concepts(reply)
        except ConceptParseError:
            parse_failures += 1
            logger.warning(
                "unparseable reply for class %r (%d so far)", class_name, parse_failures
            )
            if parse_failures > max_parse_failures:
                raise
            continue
        dedup_insert(pool, candidates, embed, threshold=threshold)

    if len(pool.atoms) < capacity:
        logger.warning(
            "pool for %r holds %d of %d atoms after %d calls",
            class_name, len(pool.atoms), capacity, len(pool.call_log),
        )
    return pool


@dataclass(frozen=True)
class CompositeConcept:
    atom_indices: tuple  # ascending, distinct
    text: str            # pool atoms joined with " or " in index order


def compose(pool: ConceptPool, atoms_per_prompt: int, num_combos: int, seed) -> list:
    """Uniformly sample distinct index sets from the pool.

    If the pool cannot supply num_combos distinct sets, every combination is
    returned (lexicographic order) with a warning.
    """
    n = len(pool.atoms)
    if not (1 <= atoms_per_prompt <= n):
        raise ValueError(
            f"atoms_per_prompt must lie in [1, {n}], got {atoms_per_prompt}"
        )
    if num_combos < 1:
        raise ValueError(f"num_combos must be >= 1, got {num_combos}")

    if isinstance(seed, int) and seed < 0:
        seed = seed & (2 ** 64 - 1)
    rng = np.random.default_rng(seed)
    total = math.comb(n, atoms_per_prompt)

    if num_combos >= total:
        if num_combos > total:
            logger.warning(
                "requested %d combos but only %d exist; returning all %d",
                num_combos, total, total,
            )
        index_sets = list(combinations(range(n), atoms_per_prompt))
    elif num_combos * 2 >= total:
        # dense request: enumerate once and subsample without replacement
        all_sets = list(combinations(range(n), atoms_per_prompt))
        picks = rng.choice(total, size=num_combos, replace=False)
        index_sets = [all_sets[i] for i in picks]
    else:
        seen = set()
        index_sets = []
        while len(index_sets) < num_combos:
            draw = tuple(sorted(rng.choice(n, size=atoms_per_prompt, replace=False).tolist()))
            if draw in seen:
                continue
            seen.add(draw)
            index_sets.append(draw)

    return [
        CompositeConcept(
            atom_indices=tuple(idx),
            text=" or ".join(pool.atoms[i] for i in idx),
        )
        for idx in index_sets
    ]
