"""Most-similar-class tables.

For each class the table lists the top_h other classes by cosine similarity
of the class-name embeddings. These neighbors later become the contrast set
("other classes") when asking a language model for discriminative concepts.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContainerError
from .store import EmbeddingContainer

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NeighborhoodTable:
    class_names: tuple
    top_h: int
    # class name -> list of (neighbor name, cosine), similarity descending
    neighbors: dict

    def write_report(self, path) -> Path:
        """JSON report: one entry per class in container order."""
        report = [
            {
                "class": name,
                "neighbors": [
                    {"name": n, "cosine": float(s)} for n, s in self.neighbors[name]
                ],
            }
            for name in self.class_names
        ]
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(
            json.dumps(report, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        return path


def build_neighborhoods(classes: EmbeddingContainer, top_h: int) -> NeighborhoodTable:
    """Rank every other class by similarity; ties break toward lower index.

    top_h larger than K - 1 is clamped (with a warning) rather than rejected
    so small ablation datasets run with default settings.
    """
    if top_h < 1:
        raise ValueError(f"top_h must be >= 1, got {top_h}")
    if classes.count < 2:
        raise ContainerError("need at least 2 classes to build neighborhoods")
    if not classes.normalized:
        raise ContainerError("class container must be normalized")

    k = classes.count
    if top_h > k - 1:
        logger.warning("top_h=%d exceeds class count - 1; clamping to %d", top_h, k - 1)
        top_h = k - 1

    rows = classes.rows.astype(np.float64)
    sims = rows @ rows.T
    neighbors = {}
    for i in range(k):
        row = sims[i].copy()
        row[i] = -np.inf  # exclude self
        # stable sort on -sim keeps lower indices first among exact ties
        order = np.argsort(-row, kind="stable")[:top_h]
        neighbors[classes.names[i]] = [
            (classes.names[j], float(sims[i, j])) for j in order
        ]
    return NeighborhoodTable(class_names=classes.names, top_h=top_h, neighbors=neighbors)
