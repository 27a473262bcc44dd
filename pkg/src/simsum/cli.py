"""Command-line pipeline: synth -> train -> extract -> evaluate."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .corpus import Document, Sentence, build_vocab, load_dataset, save_dataset
from .encoder import encode_neural, encode_tfidf, similarity_matrix
from .ranking import degree_centrality, select_top_k
from .rouge import evaluate_corpus, report_table
from .trainer import (TrainConfig, TrainingDiverged, init_model, load_checkpoint,
                      load_config, model_from_checkpoint, train)


@dataclass
class CommandOutcome:
    """Exit status, a one-line human summary, and the artifacts written."""

    status: int
    message: str
    artifacts: list[Path] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Synthetic topical corpus.
# ---------------------------------------------------------------------------

_TOPIC_BLOCK = 24     # dedicated tokens per topic
_FILLER_BLOCK = 12    # small shared pool: filler composition carries no document identity
_SENTENCE_LEN = 8
_LEAD_SENTENCES = 3   # carry the topic tokens; also the reference summary
_LEAD_TOPIC_TOKENS = 6
_UNIFORM_DOC_RATE = 0.1    # docs whose every sentence looks salient (no usable lead signal)
_BOILERPLATE_RATE = 0.9    # structured docs that carry a repeated boilerplate tail
_BOILERPLATE_COPIES = 3    # extra copies of the repeated tail sentence


def synthesize_corpus(n_docs: int, n_topics: int, seed: int) -> list[Document]:
    """Generate a topical corpus with planted lead salience.

    Each document draws one topic with a dedicated token block plus shared
    filler vocabulary; the first three sentences carry the topic tokens
    (lead salience) and form the reference summary. Two kinds of realistic
    noise are planted: a small fraction of documents where every sentence
    is topic-heavy (no lead signal to find), and repeated boilerplate tail
    sentences whose mutual similarity misleads raw centrality ranking.
    Topic blocks depend only on the topic index, so corpora generated with
    different seeds share the same topic vocabulary.
    """
    if n_docs < 1 or n_topics < 1:
        raise ValueError("synthesize_corpus: docs and topics must be >= 1")
    rng = np.random.default_rng(seed)
    topic_vocab = [[f"t{t}w{j}" for j in range(_TOPIC_BLOCK)] for t in range(n_topics)]
    filler_vocab = [f"f{j}" for j in range(_FILLER_BLOCK)]
    docs = []
    for d in range(n_docs):
        topic = int(rng.integers(n_topics))
        uniform = rng.random() < _UNIFORM_DOC_RATE
        n_sentences = int(rng.integers(8, 15))
        sentences = []
        for i in range(n_sentences):
            want_topic = _LEAD_TOPIC_TOKENS if (uniform or i < _LEAD_SENTENCES) else 0
            tokens: list[str] = []
            if i == 0:
                tokens.append(topic_vocab[topic][0])  # anchor shared by all same-topic docs
            remaining = want_topic - len(tokens)
            if remaining > 0:
                tokens.extend(str(t) for t in rng.choice(
                    topic_vocab[topic][1:], size=remaining, replace=False))
            tokens.extend(str(t) for t in rng.choice(
                filler_vocab, size=_SENTENCE_LEN - len(tokens), replace=False))
            order = rng.permutation(len(tokens))
            text = " ".join(tokens[j] for j in order)
            sentences.append(Sentence(text=text, tokens=text.split()))
        if not uniform and rng.random() < _BOILERPLATE_RATE:
            source = int(rng.integers(_LEAD_SENTENCES, len(sentences)))
            boilerplate = sentences[source]
            for _ in range(_BOILERPLATE_COPIES):
                position = int(rng.integers(_LEAD_SENTENCES, len(sentences) + 1))
                sentences.insert(position, Sentence(text=boilerplate.text,
                                                    tokens=list(boilerplate.tokens)))
        docs.append(Document(
            id=f"doc{d:04d}",
            sentences=sentences,
            summary=[s.text for s in sentences[:_LEAD_SENTENCES]],
        ))
    return docs


# ---------------------------------------------------------------------------
# Commands.
# ---------------------------------------------------------------------------

def cmd_train(args: argparse.Namespace) -> CommandOutcome:
    config = load_config(args.config)
    if args.disable:
        config = replace(
            config,
            enable_contrastive=config.enable_contrastive and "contrastive" not in args.disable,
            enable_mutual=config.enable_mutual and "mutual" not in args.disable,
        )
        config.validate()
    docs = load_dataset(args.data, min_sentences=config.min_sentences)
    resume = load_checkpoint(args.resume) if args.resume else None
    out_dir = Path(args.out)
    final, reports = train(config, docs, out_dir=out_dir, resume=resume)
    artifacts = [out_dir / "loss.log", out_dir / "ckpt_final.ckpt"]
    last = f"; final loss {reports[-1].l_total:.4f}" if reports else ""
    return CommandOutcome(
        status=0,
        message=f"trained to step {final.step} on {len(docs)} documents{last}; "
                f"wrote {out_dir / 'ckpt_final.ckpt'}",
        artifacts=artifacts,
    )


def cmd_extract(args: argparse.Namespace) -> CommandOutcome:
    docs = load_dataset(args.input, min_sentences=1)
    if not docs:
        return CommandOutcome(status=1, message="no documents in input")

    if args.encoder == "neural":
        ckpt = load_checkpoint(args.ckpt)
        model = model_from_checkpoint(ckpt)
        vocab = ckpt.vocab
    else:
        vocab = build_vocab(docs, args.vocab_size)
        if args.encoder == "random":
            config = replace(TrainConfig(), seed=args.seed)
            model = init_model(config, vocab.size)
            for p in model.named().values():
                p.requires_grad = False
        else:
            model = None

    out_path = Path(args.out)
    skipped: list[str] = []
    written = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        for doc in docs:
            if len(doc.sentences) < 2:
                print(f"warning: skipping '{doc.id}' (fewer than 2 sentences)",
                      file=sys.stderr)
                skipped.append(doc.id)
                continue
            if args.encoder == "tfidf":
                v = encode_tfidf(doc, vocab)
            else:
                ids = [vocab.ids(s.tokens) for s in doc.sentences]
                v = encode_neural(model.encoder, ids)
            centrality = degree_centrality(similarity_matrix(v))
            selection = select_top_k(centrality.values, args.k)
            chosen = [doc.sentences[i].text for i in selection.indices]
            record = {"id": doc.id, "sentences": chosen, "summary": chosen,
                      "indices": selection.indices}
            fh.write(json.dumps(record) + "\n")
            written += 1

    if written == 0:
        return CommandOutcome(status=1,
                              message=f"no document had enough sentences; skipped {len(skipped)}")
    note = f" ({len(skipped)} skipped: {', '.join(skipped)})" if skipped else ""
    return CommandOutcome(
        status=0,
        message=f"extracted top-{args.k} summaries for {written} documents{note}; "
                f"wrote {out_path}",
        artifacts=[out_path],
    )


def cmd_evaluate(args: argparse.Namespace) -> CommandOutcome:
    predictions = load_dataset(args.pred, min_sentences=1)
    references = load_dataset(args.ref, min_sentences=1)
    report = evaluate_corpus(predictions, references)
    table = report_table(report)
    print(table)
    artifacts = []
    if args.out:
        Path(args.out).write_text(table + "\n", encoding="utf-8")
        artifacts.append(Path(args.out))
    return CommandOutcome(status=0,
                          message=f"scored {len(predictions)} documents",
                          artifacts=artifacts)


def cmd_synth(args: argparse.Namespace) -> CommandOutcome:
    docs = synthesize_corpus(args.docs, args.topics, args.seed)
    save_dataset(docs, args.out)
    return CommandOutcome(
        status=0,
        message=f"wrote {len(docs)} documents over {args.topics} topics to {args.out}",
        artifacts=[Path(args.out)],
    )


# ---------------------------------------------------------------------------
# Parser and entry point.
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simsum",
        description="Unsupervised extractive summarization: train a sentence "
                    "encoder, rank sentences by degree centrality, extract "
                    "top-k summaries and score them with ROUGE.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the sentence encoder and amplifier")
    p.add_argument("--data", required=True, help="training dataset (one JSON record per line)")
    p.add_argument("--config", required=True, help="flat key = value config file")
    p.add_argument("--out", required=True, help="output directory for checkpoints and loss log")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--disable", action="append", choices=["contrastive", "mutual"],
                   default=[], help="turn off a loss component (repeatable)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("extract", help="rank sentences and extract top-k summaries")
    p.add_argument("--input", required=True)
    p.add_argument("--encoder", required=True, choices=["neural", "tfidf", "random"])
    p.add_argument("--ckpt", help="trained checkpoint (required iff --encoder neural)")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0,
                   help="initialisation seed for --encoder random")
    p.add_argument("--vocab-size", type=int, default=20000,
                   help="vocabulary size for tfidf/random encoders")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("evaluate", help="score predictions against references with ROUGE")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--out", help="also write the score table to this file")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="generate a synthetic topical corpus")
    p.add_argument("--docs", type=int, required=True)
    p.add_argument("--topics", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "extract":
        if args.encoder == "neural" and not args.ckpt:
            parser.error("--ckpt is required with --encoder neural")
        if args.encoder != "neural" and args.ckpt:
            parser.error("--ckpt only applies to --encoder neural")
    if args.command == "synth" and (args.docs < 1 or args.topics < 1):
        parser.error("--docs and --topics must be >= 1")
    try:
        outcome = args.func(args)
    except (ValueError, OSError, TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if outcome.message:
        stream = sys.stdout if outcome.status == 0 else sys.stderr
        print(outcome.message, file=stream)
    return outcome.status


if __name__ == "__main__":
    sys.exit(main())
