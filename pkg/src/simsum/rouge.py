"""From-scratch ROUGE-1, ROUGE-2 and ROUGE-L scoring.

Clipped n-gram overlap for ROUGE-N; a single longest-common-subsequence
over the flattened token sequences for ROUGE-L (not the multi-sentence
union variant, so values may differ slightly from toolkits that use it).
No stemming or stopword removal; tokenization is shared with the corpus
module so candidate and reference text are split identically everywhere.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from .corpus import Document, tokenize


@dataclass
class RougeScore:
    precision: float
    recall: float
    f1: float


@dataclass
class RougeReport:
    """Corpus-level scores: arithmetic means of the per-document values."""

    rouge1: RougeScore
    rouge2: RougeScore
    rougeL: RougeScore


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: list[str], reference: list[str], n: int) -> RougeScore:
    """Clipped n-gram overlap; empty gram sets zero out the affected component."""
    if n < 1:
        raise ValueError("rouge_n: n must be >= 1")
    cand_grams = _ngrams(candidate, n)
    ref_grams = _ngrams(reference, n)
    overlap = sum(min(count, ref_grams[gram]) for gram, count in cand_grams.items())
    cand_total = sum(cand_grams.values())
    ref_total = sum(ref_grams.values())
    precision = overlap / cand_total if cand_total else 0.0
    recall = overlap / ref_total if ref_total else 0.0
    return RougeScore(precision=precision, recall=recall, f1=_f1(precision, recall))


def _lcs_length(a: list[str], b: list[str]) -> int:
    # Rolling one-row dynamic programme.
    if not a or not b:
        return 0
    row = [0] * (len(b) + 1)
    for x in a:
        prev = 0
        for j, y in enumerate(b, start=1):
            cur = row[j]
            row[j] = prev + 1 if x == y else max(row[j], row[j - 1])
            prev = cur
    return row[-1]


def rouge_l(candidate: list[str], reference: list[str]) -> RougeScore:
    """Longest common subsequence over the flattened token sequences."""
    lcs = _lcs_length(candidate, reference)
    precision = lcs / len(candidate) if candidate else 0.0
    recall = lcs / len(reference) if reference else 0.0
    return RougeScore(precision=precision, recall=recall, f1=_f1(precision, recall))


def _summary_tokens(sentences: list[str]) -> list[str]:
    tokens: list[str] = []
    for sentence in sentences:
        tokens.extend(tokenize(sentence))
    return tokens


def _score_all(candidate: list[str], reference: list[str]) -> dict[str, RougeScore]:
    return {
        "rouge1": rouge_n(candidate, reference, 1),
        "rouge2": rouge_n(candidate, reference, 2),
        "rougeL": rouge_l(candidate, reference),
    }


def _best_by_f1(candidate: list[str], references: list[list[str]]) -> dict[str, RougeScore]:
    # Multi-reference reduction: keep, per metric, the reference with the best F1.
    best: dict[str, RougeScore] = {}
    for reference in references:
        for metric, score in _score_all(candidate, reference).items():
            if metric not in best or score.f1 > best[metric].f1:
                best[metric] = score
    return best


def evaluate_corpus(predictions: list[Document], references: list[Document]) -> RougeReport:
    """Mean per-document scores of predicted summaries against reference summaries.

    Documents are matched by id; the candidate and reference texts are the
    summary sentences joined in document order.
    """
    pred_by_id = {doc.id: doc for doc in predictions}
    ref_by_id = {doc.id: doc for doc in references}
    missing_refs = sorted(set(pred_by_id) - set(ref_by_id))
    missing_preds = sorted(set(ref_by_id) - set(pred_by_id))
    if missing_refs or missing_preds:
        raise ValueError(
            "evaluate_corpus: id mismatch"
            + (f"; missing from references: {', '.join(missing_refs)}" if missing_refs else "")
            + (f"; missing from predictions: {', '.join(missing_preds)}" if missing_preds else ""))
    if not pred_by_id:
        raise ValueError("evaluate_corpus: no documents to score")

    sums = {m: [0.0, 0.0, 0.0] for m in ("rouge1", "rouge2", "rougeL")}
    for doc_id in sorted(pred_by_id):
        pred = pred_by_id[doc_id]
        ref = ref_by_id[doc_id]
        if pred.summary is None:
            raise ValueError(f"evaluate_corpus: prediction '{doc_id}' has no summary")
        if ref.summary is None:
            raise ValueError(f"evaluate_corpus: reference '{doc_id}' has no summary")
        candidate = _summary_tokens(pred.summary)
        scores = _best_by_f1(candidate, [_summary_tokens(ref.summary)])
        for metric, score in scores.items():
            sums[metric][0] += score.precision
            sums[metric][1] += score.recall
            sums[metric][2] += score.f1

    n = len(pred_by_id)
    means = {m: RougeScore(p / n, r / n, f / n) for m, (p, r, f) in sums.items()}
    return RougeReport(rouge1=means["rouge1"], rouge2=means["rouge2"],
                       rougeL=means["rougeL"])


def report_table(report: RougeReport) -> str:
    """Human-readable tab-separated table, three decimals."""
    lines = ["metric\tprecision\trecall\tf1"]
    for name, score in (("rouge1", report.rouge1), ("rouge2", report.rouge2),
                        ("rougeL", report.rougeL)):
        lines.append(f"{name}\t{score.precision:.3f}\t{score.recall:.3f}\t{score.f1:.3f}")
    return "\n".join(lines)


def report_records(report: RougeReport) -> list[str]:
    """One machine-parsable line per metric at full precision."""
    records = []
    for name, score in (("rouge1", report.rouge1), ("rouge2", report.rouge2),
                        ("rougeL", report.rougeL)):
        records.append(f"metric={name}\tprecision={score.precision!r}"
                       f"\trecall={score.recall!r}\tf1={score.f1!r}")
    return records
