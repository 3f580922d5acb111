"""Embedding containers and similarity kernels.

A container is a named, role-tagged matrix of float32 row vectors. On disk it
is a pair of files: `<name>.manifest.json` describing the matrix and a raw
little-endian float32 data file holding the rows in row-major order. The pair
round-trips bit-for-bit.

Containers are immutable once constructed; the row buffer is marked
read-only so instances can be shared across worker threads.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .errors import ContainerError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
DTYPE_TAG = "f32le"  # raw rows are always little-endian float32
UNIT_NORM_ATOL = 1e-4  # slack for float32 rows that were normalized upstream


class Role(str, enum.Enum):
    """What the rows of a container represent."""

    CLASS = "class"
    PROMPT = "prompt"
    IMAGE = "image"
    CONCEPT = "concept"


@dataclass(frozen=True)
class EmbeddingContainer:
    dim: int
    count: int
    names: tuple
    role: Role
    rows: np.ndarray
    normalized: bool

    def __post_init__(self):
        if self.dim < 1:
            raise ContainerError(f"dim must be >= 1, got {self.dim}")
        if self.count < 0:
            raise ContainerError(f"count must be >= 0, got {self.count}")
        rows = np.asarray(self.rows)
        if rows.dtype != np.float32:
            raise ContainerError(f"rows must be float32, got {rows.dtype}")
        if rows.shape != (self.count, self.dim):
            raise ContainerError(
                f"rows shape {rows.shape} does not match (count, dim)="
                f"({self.count}, {self.dim})"
            )
        if len(self.names) != self.count:
            raise ContainerError(
                f"{len(self.names)} names for {self.count} rows"
            )
        if len(set(self.names)) != len(self.names):
            raise ContainerError("duplicate names in container")
        if rows.size and not np.all(np.isfinite(rows)):
            raise ContainerError("rows contain non-finite values")
        if self.normalized and rows.size:
            norms = np.linalg.norm(rows.astype(np.float64), axis=1)
            bad = np.abs(norms - 1.0) > UNIT_NORM_ATOL
            if np.any(bad):
                i = int(np.argmax(bad))
                raise ContainerError(
                    f"normalized container has row {i} with norm {norms[i]:.6g}"
                )
        rows.flags.writeable = False
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "role", Role(self.role))


@dataclass(frozen=True)
class SimilarityMatrix:
    row_names: tuple
    col_names: tuple
    values: np.ndarray  # float32, shape (len(row_names), len(col_names))

    def __post_init__(self):
        v = self.values
        if v.shape != (len(self.row_names), len(self.col_names)):
            raise ContainerError("similarity shape does not match name lists")
        if v.size and (v.max() > 1 + 1e-5 or v.min() < -1 - 1e-5):
            raise ContainerError(
                "cosine similarity outside [-1-1e-5, 1+1e-5]; inputs were not unit rows"
            )


def _paths_for(manifest_path: Path):
    stem = manifest_path.name
    if stem.endswith(".manifest.json"):
        stem = stem[: -len(".manifest.json")]
    return manifest_path.parent / f"{stem}.manifest.json", f"{stem}.f32"


def save_container(container: EmbeddingContainer, path: Union[str, Path]) -> Path:
    """Write `<name>.manifest.json` plus the raw row data next to it."""
    manifest_path, data_name = _paths_for(Path(path))
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    data = container.rows.astype("<f4", copy=False).tobytes()
    (manifest_path.parent / data_name).write_bytes(data)
    manifest = {
        "version": FORMAT_VERSION,
        "dim": container.dim,
        "count": container.count,
        "role": container.role.value,
        "normalized": container.normalized,
        "dtype": DTYPE_TAG,
        "names": list(container.names),
        "data": data_name,
    }
    manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    return manifest_path


def load_container(path: Union[str, Path]) -> EmbeddingContainer:
    """Load a container pair; every manifest/data inconsistency is an error."""
    manifest_path = Path(path)
    if not manifest_path.is_file():
        raise ContainerError(f"manifest file missing: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ContainerError(f"unreadable manifest {manifest_path}: {e}") from e
    for key in ("version", "dim", "count", "role", "normalized", "dtype", "names", "data"):
        if key not in manifest:
            raise ContainerError(f"manifest missing key '{key}'")
    if manifest["version"] != FORMAT_VERSION:
        raise ContainerError(f"unsupported container version {manifest['version']}")
    if manifest["dtype"] != DTYPE_TAG:
        raise ContainerError(f"unsupported dtype tag {manifest['dtype']!r}")
    dim, count = int(manifest["dim"]), int(manifest["count"])
    data_path = manifest_path.parent / manifest["data"]
    if not data_path.is_file():
        raise ContainerError(f"data file missing: {data_path}")
    blob = data_path.read_bytes()
    expected = count * dim * 4
    if len(blob) != expected:
        raise ContainerError(
            f"data size mismatch: {len(blob)} bytes on disk, manifest implies {expected}"
        )
    rows = np.frombuffer(blob, dtype="<f4").reshape(count, dim)
    return EmbeddingContainer(
        dim=dim,
        count=count,
        names=tuple(manifest["names"]),
        role=Role(manifest["role"]),
        rows=rows.astype(np.float32, copy=True),
        normalized=bool(manifest["normalized"]),
    )


def l2_normalize(container: EmbeddingContainer) -> EmbeddingContainer:
    """Rescale every row to unit L2 norm (computed in float64, stored float32)."""
    rows64 = container.rows.astype(np.float64)
    norms = np.linalg.norm(rows64, axis=1)
    zero = norms == 0.0
    if np.any(zero):
        i = int(np.argmax(zero))
        raise ContainerError(f"cannot normalize zero-norm row {i} ({container.names[i]!r})")
    out = (rows64 / norms[:, None]).astype(np.float32)
    return EmbeddingContainer(
        dim=container.dim,
        count=container.count,
        names=container.names,
        role=container.role,
        rows=out,
        normalized=True,
    )


def cosine_sim(a: EmbeddingContainer, b: EmbeddingContainer) -> SimilarityMatrix:
    """All-pairs cosine similarity between two normalized containers."""
    if a.dim != b.dim:
        raise ContainerError(f"dim mismatch: {a.dim} vs {b.dim}")
    if not (a.normalized and b.normalized):
        raise ContainerError("cosine_sim requires normalized containers")
    values = (a.rows.astype(np.float64) @ b.rows.astype(np.float64).T).astype(np.float32)
    return SimilarityMatrix(row_names=a.names, col_names=b.names, values=values)


def sim_to_prob(s):
    """Map similarity in [-1, 1] to [0, 1] by (s + 1) / 2.

    Inputs outside the domain are clamped to the nearest endpoint and a
    warning is logged once per call.
    """
    arr = np.asarray(s, dtype=np.float64)
    if arr.size and (arr.max() > 1 + 1e-5 or arr.min() < -1 - 1e-5):
        logger.warning(
            "similarity outside [-1, 1] (min %.6g, max %.6g); clamping",
            float(arr.min()), float(arr.max()),
        )
    out = (np.clip(arr, -1.0, 1.0) + 1.0) / 2.0
    if np.isscalar(s) or np.ndim(s) == 0:
        return float(out)
    return out
