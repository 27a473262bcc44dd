"""Degree-centrality salience ranking and top-k sentence extraction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffmath as dm
from .diffmath import Tensor


@dataclass
class SummarySelection:
    """Chosen sentence indices in document order, plus the requested k."""

    indices: list[int]
    k: int


def degree_centrality(e: Tensor) -> Tensor:
    """Per-sentence sum of similarities to every other sentence (self excluded)."""
    if e.values.ndim != 2 or e.values.shape[0] != e.values.shape[1]:
        raise ValueError(f"degree_centrality: expected a square matrix, got {e.values.shape}")
    n = e.values.shape[0]
    if n < 2:
        raise ValueError("degree_centrality: need at least 2 sentences")
    off_diagonal = Tensor(1.0 - np.eye(n))
    return dm.matmul(dm.mul(e, off_diagonal), Tensor(np.ones(n)))


def rank_scores(dc: Tensor, tau_rank: float) -> Tensor:
    """Softmax of centrality values divided by tau_rank * (n - 1)."""
    if tau_rank <= 0:
        raise ValueError("rank_scores: tau_rank must be positive")
    if dc.values.ndim != 1:
        raise ValueError(f"rank_scores: expected a 1-D vector, got {dc.values.shape}")
    n = dc.values.shape[0]
    if n < 2:
        raise ValueError("rank_scores: need at least 2 sentences")
    if not np.all(np.isfinite(dc.values)):
        raise ValueError("rank_scores: non-finite centrality values")
    return dm.softmax(dm.scale(dc, 1.0 / (tau_rank * (n - 1))))


def dc_loss(r: Tensor, selection: SummarySelection) -> Tensor:
    """Negative log of the score mass on the selected sentences.

    Implements the literal double normalisation: the denominator sums all
    scores even though softmax already makes that sum 1 (it is a numeric
    no-op kept for fidelity). The selection is a constant; no gradient
    flows through it.
    """
    n = r.values.shape[0]
    if not selection.indices:
        raise ValueError("dc_loss: empty selection")
    if any(i < 0 or i >= n for i in selection.indices):
        raise ValueError(f"dc_loss: selection indices out of range for {n} sentences")
    mask = np.zeros(n)
    mask[selection.indices] = 1.0
    numerator = dm.dot(r, Tensor(mask))
    if float(numerator.values) == 0.0:
        raise ValueError("dc_loss: selected score mass underflowed to zero")
    return dm.sub(dm.log(dm.sum_all(r)), dm.log(numerator))


def select_top_k(scores: np.ndarray | Tensor, k: int) -> SummarySelection:
    """Indices of the k largest scores, ties to the earlier position, in document order."""
    if k < 1:
        raise ValueError("select_top_k: k must be >= 1")
    values = scores.values if isinstance(scores, Tensor) else np.asarray(scores)
    if values.ndim != 1:
        raise ValueError(f"select_top_k: expected a 1-D vector, got {values.shape}")
    order = np.argsort(-values, kind="stable")  # stable: equal scores keep earlier index first
    chosen = sorted(int(i) for i in order[:min(k, values.shape[0])])
    return SummarySelection(indices=chosen, k=k)
