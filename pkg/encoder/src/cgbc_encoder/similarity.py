"""Record-once similarity fixture for semantic regression checks.

Real checkpoints should place related texts closer together than unrelated
ones. Recording captures the cosines for one probe triple so later runs can
detect both semantic breakage (ordering flips) and numeric drift (stored
cosines no longer reproduce).

Record on a machine that can load the checkpoint:

    python -m cgbc_encoder.similarity <model-id-or-path> <fixture.json>
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

from .backend import ClipBackend

ANCHOR_TEXT = "a photo of a cat"
NEAR_TEXT = "a photo of a dog"
FAR_TEXT = "a satellite image"


def record_similarity_fixture(
    model_id: str, out_path, backend: Optional[ClipBackend] = None
) -> dict:
    """Encode the probe triple once and store the cosines alongside it."""
    backend = backend or ClipBackend(model_id)
    rows = backend.encode_texts([ANCHOR_TEXT, NEAR_TEXT, FAR_TEXT])
    fixture = {
        "model_id": str(model_id),
        "anchor": ANCHOR_TEXT,
        "near": NEAR_TEXT,
        "far": FAR_TEXT,
        "cos_near": float(rows[0] @ rows[1]),
        "cos_far": float(rows[0] @ rows[2]),
    }
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(
        json.dumps(fixture, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return fixture


def verify_similarity_fixture(
    path, backend: Optional[ClipBackend] = None, atol: float = 5e-3
) -> dict:
    """Re-encode the recorded texts and compare against the stored cosines.

    The report's `reproduced` flag means the fresh cosines match the stored
    ones within `atol`; `ordered` means the near text still scores above the
    far text.
    """
    fixture = json.loads(Path(path).read_text(encoding="utf-8"))
    backend = backend or ClipBackend(fixture["model_id"])
    rows = backend.encode_texts([fixture["anchor"], fixture["near"], fixture["far"]])
    cos_near = float(rows[0] @ rows[1])
    cos_far = float(rows[0] @ rows[2])
    return {
        "fixture": fixture,
        "cos_near": cos_near,
        "cos_far": cos_far,
        "reproduced": (
            abs(cos_near - fixture["cos_near"]) <= atol
            and abs(cos_far - fixture["cos_far"]) <= atol
        ),
        "ordered": cos_near > cos_far,
    }


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(
        prog="python -m cgbc_encoder.similarity",
        description="record the similarity fixture for a checkpoint",
    )
    parser.add_argument("model", help="checkpoint id or local path")
    parser.add_argument("out", help="fixture JSON path to write")
    args = parser.parse_args(argv)
    fixture = record_similarity_fixture(args.model, args.out)
    print(
        f"wrote {args.out} (cos_near {fixture['cos_near']:.4f}, "
        f"cos_far {fixture['cos_far']:.4f})"
    )
    if fixture["cos_near"] <= fixture["cos_far"]:
        print("warning: near text did not score above far text; "
              "this checkpoint looks non-semantic")
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
