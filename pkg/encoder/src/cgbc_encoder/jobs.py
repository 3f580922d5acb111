"""Encode jobs: a validated input list in, a container file pair out.

A job names the checkpoint, the inputs (prompt strings or image paths), the
output manifest path, and the batch size. Running one writes a standard
embedding container whose row names are the inputs, in order.
"""

from __future__ import annotations

import os
import shutil
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from cgbc.store import EmbeddingContainer, Role, save_container

from .backend import ClipBackend, EncodeError

DEFAULT_BATCH = 32


@dataclass(frozen=True)
class EncodeJob:
    model_id: str
    inputs: tuple
    output: Union[str, Path]
    batch: int = DEFAULT_BATCH

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(str(x) for x in self.inputs))
        if not self.inputs:
            raise EncodeError("inputs must be non-empty")
        if self.batch < 1:
            raise EncodeError(f"batch must be >= 1, got {self.batch}")
        seen = set()
        for item in self.inputs:
            if item in seen:
                # row names must stay unique within one container
                raise EncodeError(f"duplicate input {item!r}")
            seen.add(item)


def _write_atomic(container: EmbeddingContainer, output) -> Path:
    """Save the pair into a scratch dir next to the target, then move it.

    The data file lands before the manifest, so a reader that sees the
    manifest always finds complete row data behind it.
    """
    out = Path(output)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmpdir = Path(tempfile.mkdtemp(dir=out.parent, prefix=".encode-"))
    try:
        manifest = save_container(container, tmpdir / out.name)
        final = None
        for path in sorted(tmpdir.iterdir(), key=lambda p: p == manifest):
            os.replace(path, out.parent / path.name)
            if path == manifest:
                final = out.parent / path.name
        return final
    finally:
        shutil.rmtree(tmpdir, ignore_errors=True)


def _finish(job: EncodeJob, rows, role: Role) -> Path:
    container = EmbeddingContainer(
        dim=rows.shape[1],
        count=rows.shape[0],
        names=job.inputs,
        role=role,
        rows=rows,
        normalized=True,
    )
    return _write_atomic(container, job.output)


def encode_texts(
    job: EncodeJob, role: Role = Role.PROMPT, backend: Optional[ClipBackend] = None
) -> Path:
    """Encode prompt strings; returns the written manifest path."""
    backend = backend or ClipBackend(job.model_id)
    rows = backend.encode_texts(list(job.inputs), batch=job.batch)
    return _finish(job, rows, role)


def encode_images(
    job: EncodeJob, role: Role = Role.IMAGE, backend: Optional[ClipBackend] = None
) -> Path:
    """Encode image files; returns the written manifest path."""
    backend = backend or ClipBackend(job.model_id)
    rows = backend.encode_images(list(job.inputs), batch=job.batch)
    return _finish(job, rows, role)
