"""Differential signal amplifier: residual refinement of sentence embeddings.

Each iteration amplifies the difference between a sentence vector and the
mean of the other sentence vectors through a two-layer ReLU MLP, added
back residually. A sigmoid scoring head converts the amplified vectors to
per-sentence scores, trained against coarse top/bottom pseudo-labels; its
own top-k sentences become the fine pseudo-labels for the ranking branch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffmath as dm
from .diffmath import Tensor
from .ranking import SummarySelection, select_top_k


@dataclass
class AmplifierParams:
    """Two-layer MLP weights plus the scoring vector."""

    w1: Tensor  # (d_out, d_amp)
    b1: Tensor  # (d_amp,)
    w2: Tensor  # (d_amp, d_out)
    b2: Tensor  # (d_out,)
    w: Tensor   # (d_out,) scoring vector

    def named(self) -> dict[str, Tensor]:
        return {"amp_w1": self.w1, "amp_b1": self.b1, "amp_w2": self.w2,
                "amp_b2": self.b2, "amp_score_w": self.w}


@dataclass
class CoarseLabels:
    """Top-k salient and bottom-k unimportant sentence indices; the rest are unlabeled."""

    salient: list[int]
    unimportant: list[int]
    k: int
    n: int


def init_amplifier_params(d_out: int, d_amp: int, rng: np.random.Generator) -> AmplifierParams:
    # The scoring vector starts at zero so every sentence opens at score 0.5:
    # the first fine selections then fall back to the earlier-position
    # tie-break instead of an arbitrary random direction, which would
    # otherwise get frozen in by the mutual-learning feedback.
    def u(*shape):
        return Tensor(rng.uniform(-0.05, 0.05, size=shape), requires_grad=True)

    return AmplifierParams(
        w1=u(d_out, d_amp),
        b1=Tensor(np.zeros(d_amp), requires_grad=True),
        w2=u(d_amp, d_out),
        b2=Tensor(np.zeros(d_out), requires_grad=True),
        w=Tensor(np.zeros(d_out), requires_grad=True),
    )


def amplify(v: Tensor, params: AmplifierParams, n_iterations: int) -> Tensor:
    """Apply the residual difference amplification ``n_iterations`` times.

    Within one iteration every leave-one-out mean is computed from that
    iteration's input (synchronous update), which keeps the operation
    permutation-equivariant.
    """
    if v.values.ndim != 2:
        raise ValueError(f"amplify: expected a 2-D matrix, got {v.values.shape}")
    n = v.values.shape[0]
    if n < 2:
        raise ValueError("amplify: need at least 2 sentences for leave-one-out means")
    if n_iterations < 0:
        raise ValueError("amplify: iteration count must be >= 0")
    # Row i of loo @ v is the mean of all rows except i.
    loo = Tensor((np.ones((n, n)) - np.eye(n)) / (n - 1))
    for _ in range(n_iterations):
        diff = dm.sub(v, dm.matmul(loo, v))
        hidden = dm.relu(dm.add(dm.matmul(diff, params.w1), params.b1))
        amplified = dm.add(dm.matmul(hidden, params.w2), params.b2)
        v = dm.add(amplified, v)
    return v


def amp_scores(v: Tensor, w: Tensor) -> Tensor:
    """Sigmoid of the projection of each row onto the scoring vector."""
    if v.values.ndim != 2 or w.values.ndim != 1 or v.values.shape[1] != w.values.shape[0]:
        raise ValueError(
            f"amp_scores: shape mismatch {v.values.shape} vs {w.values.shape}")
    return dm.sigmoid(dm.matmul(v, w))


def coarse_labels(r: np.ndarray | Tensor, ratio: float) -> CoarseLabels:
    """Label the top-k sentences salient and the bottom-k unimportant.

    k = max(1, floor(ratio * n)). A single descending ranking (ties to the
    earlier position) is sliced at both ends, so the two sets are always
    disjoint. The scores are treated as constants; no gradient flows
    through labeling.
    """
    if not 0 < ratio <= 0.5:
        raise ValueError("coarse_labels: ratio must be in (0, 0.5]")
    values = r.values if isinstance(r, Tensor) else np.asarray(r)
    n = values.shape[0]
    if n < 2:
        raise ValueError("coarse_labels: need at least 2 sentences")
    k = max(1, int(np.floor(ratio * n)))
    ranked = np.argsort(-values, kind="stable")
    return CoarseLabels(
        salient=sorted(int(i) for i in ranked[:k]),
        unimportant=sorted(int(i) for i in ranked[n - k:]),
        k=k,
        n=n,
    )


def amp_loss(scores: Tensor, labels: CoarseLabels) -> Tensor:
    """Binary cross entropy averaged over the labeled sentences only."""
    n = scores.values.shape[0]
    labeled = labels.salient + labels.unimportant
    if not labeled:
        raise ValueError("amp_loss: no labeled sentences")
    if any(i < 0 or i >= n for i in labeled):
        raise ValueError(f"amp_loss: label indices out of range for {n} sentences")
    # Scores must be strictly inside (0, 1); an exact 0 or 1 cannot come out of
    # a healthy sigmoid and would turn the masked log into 0 * inf.
    if np.any(scores.values <= 0.0) or np.any(scores.values >= 1.0):
        raise ValueError("amp_loss: score outside the open interval (0, 1)")
    y = np.zeros(n)
    y[labels.salient] = 1.0
    mask = np.zeros(n)
    mask[labeled] = 1.0
    ones = Tensor(np.ones(n))
    per_sentence = dm.add(
        dm.mul(Tensor(y), dm.log(scores)),
        dm.mul(Tensor(1.0 - y), dm.log(dm.sub(ones, scores))),
    )
    return dm.scale(dm.sum_all(dm.mul(Tensor(mask), per_sentence)), -1.0 / len(labeled))


def fine_selection(scores: Tensor, k: int) -> SummarySelection:
    """Top-k sentences by amplifier score; the result is a constant (gradients detached)."""
    return select_top_k(scores.values, k)
