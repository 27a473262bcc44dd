"""Dataset loading, tokenization, vocabulary construction and batch assembly.

Datasets are UTF-8 files with one JSON record per line:
``{"id": str, "sentences": [str, ...], "summary": [str, ...]?}``.
Unknown keys are ignored so that prediction files produced by extraction
(which add an ``indices`` field) remain loadable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

OOV_ID = 0


@dataclass
class Sentence:
    """One sentence: the raw text plus its lowercase tokens."""

    text: str
    tokens: list[str]


@dataclass
class Document:
    """An ordered sequence of sentences with a stable id."""

    id: str
    sentences: list[Sentence]
    summary: list[str] | None = None


@dataclass
class Vocabulary:
    """Token ids (0 reserved for out-of-vocabulary) plus document frequencies."""

    token_to_id: dict[str, int]
    doc_freq: dict[str, int]
    n_docs: int

    @property
    def size(self) -> int:
        """Number of ids including the reserved OOV slot."""
        return len(self.token_to_id) + 1

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, OOV_ID)

    def ids(self, tokens: list[str]) -> list[int]:
        return [self.token_to_id.get(t, OOV_ID) for t in tokens]


@dataclass
class TrainingBatch:
    """Same-document sentence pairs plus the documents they came from.

    ``pair_sentences[2i]`` and ``pair_sentences[2i+1]`` share a document;
    every other position comes from a different document.
    """

    pair_sentences: list[tuple[str, Sentence]] = field(default_factory=list)
    docs: list[Document] = field(default_factory=list)


def tokenize(raw_text: str) -> list[str]:
    """Whitespace split, trim non-alphanumeric edges, lowercase, drop empties."""
    tokens = []
    for piece in raw_text.split():
        start, end = 0, len(piece)
        while start < end and not piece[start].isalnum():
            start += 1
        while end > start and not piece[end - 1].isalnum():
            end -= 1
        trimmed = piece[start:end].lower()
        if trimmed:
            tokens.append(trimmed)
    return tokens


def _parse_record(obj, line_no: int) -> Document:
    if not isinstance(obj, dict):
        raise ValueError(f"line {line_no}: record must be an object")
    doc_id = obj.get("id")
    if not isinstance(doc_id, str) or not doc_id:
        raise ValueError(f"line {line_no}: missing or invalid 'id'")
    raw_sentences = obj.get("sentences")
    if not isinstance(raw_sentences, list) or not all(isinstance(s, str) for s in raw_sentences):
        raise ValueError(f"line {line_no}: 'sentences' must be an array of strings")
    summary = obj.get("summary")
    if summary is not None:
        if not isinstance(summary, list) or not all(isinstance(s, str) for s in summary):
            raise ValueError(f"line {line_no}: 'summary' must be an array of strings")
    sentences = []
    for text in raw_sentences:
        tokens = tokenize(text)
        if tokens:  # sentences that tokenize to nothing are dropped at load
            sentences.append(Sentence(text=text, tokens=tokens))
    return Document(id=doc_id, sentences=sentences, summary=summary)


def load_dataset(path: str | Path, min_sentences: int = 2) -> list[Document]:
    """Load documents with at least ``min_sentences`` sentences after tokenization.

    Raises on malformed records (naming the line number) and duplicate ids.
    """
    if min_sentences < 1:
        raise ValueError("min_sentences must be >= 1")
    docs: list[Document] = []
    seen_ids: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            doc = _parse_record(obj, line_no)
            if doc.id in seen_ids:
                raise ValueError(f"line {line_no}: duplicate document id '{doc.id}'")
            seen_ids.add(doc.id)
            if len(doc.sentences) >= min_sentences:
                docs.append(doc)
    return docs


def save_dataset(docs: list[Document], path: str | Path) -> None:
    """Write documents in the line-delimited record format used by load_dataset."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            record: dict = {"id": doc.id, "sentences": [s.text for s in doc.sentences]}
            if doc.summary is not None:
                record["summary"] = doc.summary
            fh.write(json.dumps(record) + "\n")


def build_vocab(docs: list[Document], max_size: int) -> Vocabulary:
    """Keep the ``max_size`` most frequent tokens (ties broken lexicographically)."""
    if max_size < 1:
        raise ValueError("max_size must be >= 1")
    if not docs:
        raise ValueError("build_vocab: empty document list")
    counts: dict[str, int] = {}
    doc_freq: dict[str, int] = {}
    for doc in docs:
        doc_tokens = set()
        for sentence in doc.sentences:
            for token in sentence.tokens:
                counts[token] = counts.get(token, 0) + 1
                doc_tokens.add(token)
        for token in doc_tokens:
            doc_freq[token] = doc_freq.get(token, 0) + 1
    kept = sorted(counts, key=lambda t: (-counts[t], t))[:max_size]
    token_to_id = {token: i + 1 for i, token in enumerate(kept)}  # id 0 reserved for OOV
    return Vocabulary(
        token_to_id=token_to_id,
        doc_freq={t: doc_freq[t] for t in kept},
        n_docs=len(docs),
    )


def make_batch(docs: list[Document], batch_pairs: int, rng: np.random.Generator,
               max_doc_sentences: int = 50) -> TrainingBatch:
    """Sample ``batch_pairs`` documents and two distinct sentences from each.

    The sampled documents are also returned, truncated to their first
    ``max_doc_sentences`` sentences. Deterministic given the generator state.
    """
    if batch_pairs < 2:
        raise ValueError("batch_pairs must be >= 2 (a pair needs in-batch negatives)")
    eligible = [d for d in docs if len(d.sentences) >= 2]
    if len(eligible) < batch_pairs:
        raise ValueError(
            f"need {batch_pairs} documents with >= 2 sentences, found {len(eligible)}")
    chosen = rng.choice(len(eligible), size=batch_pairs, replace=False)
    pair_sentences: list[tuple[str, Sentence]] = []
    batch_docs: list[Document] = []
    for idx in chosen:
        doc = eligible[int(idx)]
        i, j = rng.choice(len(doc.sentences), size=2, replace=False)
        pair_sentences.append((doc.id, doc.sentences[int(i)]))
        pair_sentences.append((doc.id, doc.sentences[int(j)]))
        batch_docs.append(Document(
            id=doc.id,
            sentences=doc.sentences[:max_doc_sentences],
            summary=doc.summary,
        ))
    return TrainingBatch(pair_sentences=pair_sentences, docs=batch_docs)
