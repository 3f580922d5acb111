"""Greedy MAP selection for determinantal point processes.

The kernel is the Gram matrix of unit-norm item embeddings plus a small
diagonal jitter that keeps Cholesky factorizations defined when candidates
are duplicated or nearly collinear. Selection greedily adds the item with
the largest marginal log-determinant gain, maintaining an incremental
Cholesky factor so a full pass costs O(n * M^2) instead of O(n * M^3).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContainerError
from .store import EmbeddingContainer

logger = logging.getLogger(__name__)

DEFAULT_JITTER = 1e-8


@dataclass(frozen=True)
class DppKernel:
    n: int
    gram: np.ndarray  # float64, (n, n), symmetric PSD
    jitter: float


@dataclass(frozen=True)
class DppSelection:
    indices: tuple        # selection order
    marginal_gains: tuple  # log-det gain of each pick, non-increasing


def build_kernel(items: EmbeddingContainer, jitter: float = DEFAULT_JITTER) -> DppKernel:
    if items.count < 1:
        raise ContainerError("kernel needs at least 1 item")
    if not items.normalized:
        raise ContainerError("kernel items must be normalized")
    rows = items.rows.astype(np.float64)
    gram = rows @ rows.T
    gram = (gram + gram.T) / 2.0  # force exact symmetry
    gram[np.diag_indices(items.count)] += jitter
    return DppKernel(n=items.count, gram=gram, jitter=jitter)


def log_det(kernel: DppKernel, subset) -> float:
    """Log determinant of a principal submatrix via Cholesky; -inf if singular."""
    idx = list(subset)
    if len(set(idx)) != len(idx):
        raise ValueError("subset indices must be distinct")
    for i in idx:
        if not (0 <= i < kernel.n):
            raise ValueError(f"subset index {i} out of range for n={kernel.n}")
    if not idx:
        return 0.0
    sub = kernel.gram[np.ix_(idx, idx)]
    try:
        chol = np.linalg.cholesky(sub)
    except np.linalg.LinAlgError:
        return -math.inf
    return float(2.0 * np.sum(np.log(np.diag(chol))))


def greedy_map(kernel: DppKernel, select_size: int) -> DppSelection:
    """Pick select_size items by largest marginal gain; ties go to the
    lowest index.

    Stops early with a warning when every remaining gain falls below the
    jitter scale: past that point additions are numerically
    indistinguishable from duplicates.
    """
    n = kernel.n
    if not (1 <= select_size <= n):
        raise ValueError(f"select_size must be in [1, {n}], got {select_size}")

    # An exact duplicate of an already-selected row keeps a residual gain of
    # about 2 * jitter, so the floor sits one order of magnitude above that.
    stop_below = max(10.0 * kernel.jitter, 1e-300)
    gram = kernel.gram
    # di2s[i] is the current marginal determinant gain of item i; cis holds
    # the rows of the incremental Cholesky factor for the selected set.
    di2s = np.diag(gram).copy()
    if np.min(di2s) < -1e-9:
        raise ValueError("kernel has a negative diagonal entry; not PSD")
    cis = np.zeros((select_size, n))
    indices = []
    gains = []

    while len(indices) < select_size:
        best = int(np.argmax(di2s))  # argmax returns the first (lowest) index on ties
        best_gain = di2s[best]
        if best_gain < stop_below:
            logger.warning(
                "greedy MAP stopped at %d of %d: remaining gains below jitter scale",
                len(indices), select_size,
            )
            break
        k = len(indices)
        di = math.sqrt(best_gain)
        elements = gram[best, :]
        if k == 0:
            eis = elements / di
        else:
            ci = cis[:k, best]
            eis = (elements - ci @ cis[:k, :]) / di
        cis[k, :] = eis
        di2s = di2s - eis ** 2
        di2s[best] = -math.inf  # never re-select
        indices.append(best)
        gains.append(math.log(best_gain))

    return DppSelection(indices=tuple(indices), marginal_gains=tuple(gains))
