"""Sentence encoders and the pairwise dot-product similarity matrix.

Three interchangeable encoders produce an n x d embedding matrix for a
document: a trainable neural encoder (token embedding mean-pool, one
hidden ReLU layer, linear output), a TF-IDF bag-of-words encoder, and a
randomly initialised untrained neural encoder used as a baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffmath as dm
from .corpus import Document, Vocabulary
from .diffmath import Tensor


@dataclass
class NeuralEncoderParams:
    """Trainable arrays of the neural sentence encoder."""

    embed: Tensor  # (vocab_size, d_emb)
    w1: Tensor     # (d_emb, d_hid)
    b1: Tensor     # (d_hid,)
    w2: Tensor     # (d_hid, d_out)
    b2: Tensor     # (d_out,)

    def named(self) -> dict[str, Tensor]:
        return {"embed": self.embed, "enc_w1": self.w1, "enc_b1": self.b1,
                "enc_w2": self.w2, "enc_b2": self.b2}


def init_neural_params(vocab_size: int, d_emb: int, d_hid: int, d_out: int,
                       rng: np.random.Generator) -> NeuralEncoderParams:
    """Uniform(-0.05, 0.05) weights, zero biases; small init keeps early dot products near zero."""
    def u(*shape):
        return Tensor(rng.uniform(-0.05, 0.05, size=shape), requires_grad=True)

    return NeuralEncoderParams(
        embed=u(vocab_size, d_emb),
        w1=u(d_emb, d_hid),
        b1=Tensor(np.zeros(d_hid), requires_grad=True),
        w2=u(d_hid, d_out),
        b2=Tensor(np.zeros(d_out), requires_grad=True),
    )


def encode_neural(params: NeuralEncoderParams, sentences: list[list[int]]) -> Tensor:
    """Embed token ids, mean-pool per sentence, then a ReLU MLP; rows are sentence vectors."""
    if not sentences:
        raise ValueError("encode_neural: no sentences")
    pooled = []
    for i, ids in enumerate(sentences):
        if len(ids) == 0:
            raise ValueError(f"encode_neural: sentence {i} has no tokens")
        pooled.append(dm.row_mean(dm.gather(params.embed, ids)))
    x = dm.stack_rows(pooled)
    h = dm.relu(dm.add(dm.matmul(x, params.w1), params.b1))
    return dm.add(dm.matmul(h, params.w2), params.b2)


def encode_tfidf(doc: Document, vocab: Vocabulary) -> Tensor:
    """Bag-of-words rows: raw in-sentence count times smoothed inverse document frequency.

    The weight for a token with document frequency df over N training
    documents is ln((1 + N) / (1 + df)); out-of-vocabulary tokens
    contribute nothing (their reserved dimension 0 stays zero).
    """
    n = len(doc.sentences)
    out = np.zeros((n, vocab.size))
    idf = {token: np.log((1.0 + vocab.n_docs) / (1.0 + df))
           for token, df in vocab.doc_freq.items()}
    for i, sentence in enumerate(doc.sentences):
        for token in sentence.tokens:
            token_id = vocab.id_of(token)
            if token_id != 0:
                out[i, token_id] += idf[token]
    return Tensor(out)


def similarity_matrix(v: Tensor) -> Tensor:
    """All pairwise dot products of the embedding rows.

    Symmetrised as (M + M^T) / 2 so the output is bitwise symmetric even
    when the underlying matrix product is not.
    """
    if v.values.ndim != 2 or v.values.shape[0] < 1:
        raise ValueError(f"similarity_matrix: expected a non-empty 2-D matrix, got {v.values.shape}")
    m = dm.matmul(v, dm.transpose(v))
    return dm.scale(dm.add(m, dm.transpose(m)), 0.5)
