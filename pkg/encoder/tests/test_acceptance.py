"""Acceptance gate for the encoder: one printed verdict per shipped guarantee."""

import json
from pathlib import Path

import numpy as np
import pytest

from cgbc.store import Role, load_container
from cgbc_encoder.jobs import EncodeJob, encode_images, encode_texts
from cgbc_encoder.similarity import verify_similarity_fixture

REAL_FIXTURE = Path(__file__).parent / "assets" / "similarity_fixture.json"


def _verdict(name: str, ok: bool, detail: str):
    print(f"[ACCEPTANCE] {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{name}: {detail}"


def test_containers_pass_store_invariants_and_round_trip(
    backend, tiny_model_dir, image_files, tmp_path, capsys
):
    texts = ("a photo of a cat", "a photo of a dog", "a circuit diagram")
    text_manifest = encode_texts(
        EncodeJob(model_id=str(tiny_model_dir), inputs=texts,
                  output=tmp_path / "t.manifest.json"),
        backend=backend,
    )
    image_manifest = encode_images(
        EncodeJob(model_id=str(tiny_model_dir), inputs=tuple(image_files),
                  output=tmp_path / "i.manifest.json"),
        backend=backend,
    )
    # load_container re-runs every container invariant; reaching here means
    # shape, dtype, name uniqueness, finiteness, and unit norms all held
    t = load_container(text_manifest)
    i = load_container(image_manifest)
    ok = (
        t.names == texts
        and i.names == tuple(str(p) for p in image_files)
        and t.role is Role.PROMPT
        and i.role is Role.IMAGE
        and t.normalized and i.normalized
        and t.rows.dtype == np.float32
        and np.array_equal(t.rows, backend.encode_texts(list(texts)))
    )
    with capsys.disabled():
        _verdict(
            "encoded containers round-trip through the pipeline loader",
            ok,
            f"{t.count} text rows and {i.count} image rows reload with "
            f"names in input order",
        )


def test_recorded_semantic_fixture_holds(capsys):
    if not REAL_FIXTURE.is_file():
        with capsys.disabled():
            print(
                "[ACCEPTANCE] recorded semantic-similarity fixture: SKIP "
                "(no fixture recorded; this environment cannot download a "
                "real checkpoint)"
            )
        pytest.skip("no recorded fixture")
    fixture = json.loads(REAL_FIXTURE.read_text(encoding="utf-8"))
    report = verify_similarity_fixture(REAL_FIXTURE)
    with capsys.disabled():
        _verdict(
            "recorded semantic-similarity fixture",
            report["ordered"] and report["reproduced"],
            f"cos_near {report['cos_near']:.4f} > cos_far {report['cos_far']:.4f} "
            f"and both match the recording",
        )
    assert fixture["cos_near"] > fixture["cos_far"]
