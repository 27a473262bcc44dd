"""Joint training loop: contrastive + ranking + amplifier losses, Adam, checkpoints.

The per-step batch is derived from ``(seed, step)`` alone, so a run can be
resumed from any checkpoint and continue bit-identically. Parameters are
held in float64 but checkpoints store float32; to keep resumed runs exact,
the live training state is rounded to float32 at every checkpoint boundary
(an uninterrupted run therefore passes through the same quantisation).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import diffmath as dm
from .amplifier import (AmplifierParams, amp_loss, amp_scores, amplify,
                        coarse_labels, fine_selection, init_amplifier_params)
from .corpus import Document, TrainingBatch, Vocabulary, build_vocab, make_batch
from .diffmath import AdamState, Tensor, adam_step
from .encoder import (NeuralEncoderParams, encode_neural, init_neural_params,
                      similarity_matrix)
from .ranking import dc_loss, degree_centrality, rank_scores

CHECKPOINT_MAGIC = "SIMSUM1"
CHECKPOINT_VERSION = 1

# Seed-stream tags so init, per-step sampling and epoch shuffles draw from
# independent deterministic generators.
_STREAM_INIT = 0
_STREAM_STEP = 1
_STREAM_EPOCH = 2


@dataclass
class TrainConfig:
    """All knobs of a training run; every field is settable from a config file."""

    tau_con: float = 0.1
    tau_rank: float = 1.0
    label_ratio: float = 0.4
    summary_k: int = 3
    amplifier_iterations: int = 2
    batch_pairs: int = 8
    max_doc_sentences: int = 50
    min_sentences: int = 5
    vocab_size: int = 20000
    d_emb: int = 64
    d_hid: int = 128
    d_out: int = 64
    d_amp: int = 128
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    total_steps: int = 500
    checkpoint_every: int = 100
    seed: int = 0
    enable_contrastive: bool = True
    enable_mutual: bool = True
    # When True the amplifier reads frozen copies of the embeddings; its loss
    # still trains the amplifier but not the encoder. Kept on by default: the
    # amplifier's early-training gradient noise otherwise floods the encoder's
    # Adam second moments and stalls contrastive learning at desk scale.
    detach_amplifier_input: bool = True

    def validate(self) -> None:
        if self.tau_con <= 0 or self.tau_rank <= 0:
            raise ValueError("temperatures must be positive")
        if not 0 < self.label_ratio <= 0.5:
            raise ValueError("label_ratio must be in (0, 0.5]")
        if self.summary_k < 1:
            raise ValueError("summary_k must be >= 1")
        if not (self.enable_contrastive or self.enable_mutual):
            raise ValueError("at least one loss must be enabled")
        if self.amplifier_iterations < 0:
            raise ValueError("amplifier_iterations must be >= 0")
        if self.batch_pairs < 2:
            raise ValueError("batch_pairs must be >= 2")
        if self.max_doc_sentences < 2:
            raise ValueError("max_doc_sentences must be >= 2")
        if self.min_sentences < 1:
            raise ValueError("min_sentences must be >= 1")
        if min(self.vocab_size, self.d_emb, self.d_hid, self.d_out, self.d_amp) < 1:
            raise ValueError("model dimensions must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")


@dataclass
class LossReport:
    """Per-step loss components; l_total is exactly their float sum."""

    step: int
    l_con: float
    l_dc: float
    l_amp: float
    l_total: float

    def log_line(self) -> str:
        return (f"{self.step}\t{self.l_con!r}\t{self.l_dc!r}\t"
                f"{self.l_amp!r}\t{self.l_total!r}")


@dataclass
class ModelParams:
    """Encoder and amplifier parameters, addressable by name for the optimizer."""

    encoder: NeuralEncoderParams
    amplifier: AmplifierParams

    def named(self) -> dict[str, Tensor]:
        return {**self.encoder.named(), **self.amplifier.named()}


@dataclass
class Checkpoint:
    """Everything needed to continue or reuse a run."""

    version: int
    config: TrainConfig
    step: int
    vocab: Vocabulary
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    adam_t: int


class TrainingDiverged(RuntimeError):
    """Raised when a loss or gradient goes non-finite; never masked."""


def init_model(config: TrainConfig, vocab_size: int) -> ModelParams:
    rng = np.random.default_rng([config.seed, _STREAM_INIT])
    return ModelParams(
        encoder=init_neural_params(vocab_size, config.d_emb, config.d_hid,
                                   config.d_out, rng),
        amplifier=init_amplifier_params(config.d_out, config.d_amp, rng),
    )


def contrastive_loss(v: Tensor, tau_con: float) -> Tensor:
    """In-batch contrastive loss over sentence pairs at positions (2i, 2i+1).

    Each position acts as the anchor once with its pair partner as the
    positive; the denominator sums over every other batch position
    (positive included). Mean over all anchors, stabilised by subtracting
    the per-anchor maximum logit before exponentiation.
    """
    if tau_con <= 0:
        raise ValueError("contrastive_loss: tau_con must be positive")
    b = v.values.shape[0]
    if b % 2 != 0:
        raise ValueError(f"contrastive_loss: batch size must be even, got {b}")
    if b < 4:
        raise ValueError("contrastive_loss: need at least 2 pairs for in-batch negatives")
    logits = dm.scale(dm.matmul(v, dm.transpose(v)), 1.0 / tau_con)
    anchor_losses = []
    for a in range(b):
        p = a + 1 if a % 2 == 0 else a - 1
        row = dm.take_row(logits, a)
        mask = np.ones(b)
        mask[a] = 0.0
        # Shift so the largest kept logit is 0 and the excluded self logit is 0
        # too (its own value is subtracted), keeping exp() in range everywhere.
        shift = np.where(mask == 1.0, np.max(row.values[mask == 1.0]), row.values)
        shifted = dm.sub(row, Tensor(shift))
        denom = dm.sum_all(dm.mul(Tensor(mask), dm.exp(shifted)))
        lse = dm.add(dm.log(denom), Tensor(np.float64(np.max(row.values[mask == 1.0]))))
        one_hot = np.zeros(b)
        one_hot[p] = 1.0
        positive = dm.dot(row, Tensor(one_hot))
        anchor_losses.append(dm.sub(lse, positive))
    total = anchor_losses[0]
    for term in anchor_losses[1:]:
        total = dm.add(total, term)
    return dm.scale(total, 1.0 / b)


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        factor = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= factor
    return norm


def _doc_token_ids(doc: Document, vocab: Vocabulary) -> list[list[int]]:
    return [vocab.ids(s.tokens) for s in doc.sentences]


def _mean_of(terms: list[Tensor]) -> Tensor:
    total = terms[0]
    for term in terms[1:]:
        total = dm.add(total, term)
    return dm.scale(total, 1.0 / len(terms))


def train_step(batch: TrainingBatch, model: ModelParams, opt_state: AdamState,
               config: TrainConfig, vocab: Vocabulary, step: int) -> LossReport:
    """One optimizer step over a batch; returns the loss components.

    The mutual branch runs per document: encode, similarity, centrality,
    ranking scores, coarse labels (constant), amplification, amplifier
    scores and loss, fine selection (constant), ranking loss. Document
    losses are averaged so batch size does not rescale the objective.
    No gradient flows through either pseudo-label path.
    """
    for p in model.named().values():
        p.zero_grad()

    parts: list[Tensor] = []
    l_con = l_dc = l_amp = 0.0

    try:
        if config.enable_contrastive:
            pair_ids = [vocab.ids(sentence.tokens) for _, sentence in batch.pair_sentences]
            v_pairs = encode_neural(model.encoder, pair_ids)
            l_con_t = contrastive_loss(v_pairs, config.tau_con)
            l_con = float(l_con_t.values)
            parts.append(l_con_t)

        if config.enable_mutual:
            if not batch.docs:
                raise ValueError("train_step: mutual losses need documents in the batch")
            dc_terms, amp_terms = [], []
            for doc in batch.docs:
                v = encode_neural(model.encoder, _doc_token_ids(doc, vocab))
                e = similarity_matrix(v)
                r = rank_scores(degree_centrality(e), config.tau_rank)
                labels = coarse_labels(r, config.label_ratio)
                v_in = Tensor(v.values) if config.detach_amplifier_input else v
                amplified = amplify(v_in, model.amplifier, config.amplifier_iterations)
                scores = amp_scores(amplified, model.amplifier.w)
                amp_terms.append(amp_loss(scores, labels))
                dc_terms.append(dc_loss(r, fine_selection(scores, config.summary_k)))
            l_dc_t = _mean_of(dc_terms)
            l_amp_t = _mean_of(amp_terms)
            l_dc = float(l_dc_t.values)
            l_amp = float(l_amp_t.values)
            parts.extend([l_dc_t, l_amp_t])
    except ValueError as exc:
        # numeric guards inside the losses (non-finite centrality, saturated
        # scores) signal divergence; surface them with the step context
        raise TrainingDiverged(
            f"step {step}: {exc} (l_con={l_con} l_dc={l_dc} l_amp={l_amp})") from exc

    total_t = parts[0]
    for term in parts[1:]:
        total_t = dm.add(total_t, term)
    l_total = float(total_t.values)

    if not np.isfinite(l_total):
        raise TrainingDiverged(
            f"non-finite loss at step {step}: l_con={l_con} l_dc={l_dc} l_amp={l_amp}")
    if abs(l_total - (l_con + l_dc + l_amp)) > 1e-9:
        raise TrainingDiverged(f"loss components do not sum to total at step {step}")

    total_t.backward()
    named = model.named()
    clip_grad_norm(named, config.clip_norm)
    try:
        adam_step(named, opt_state)
    except FloatingPointError as exc:
        raise TrainingDiverged(f"step {step}: {exc}") from exc
    return LossReport(step=step, l_con=l_con, l_dc=l_dc, l_amp=l_amp, l_total=l_total)


def _quantize_state(model: ModelParams, opt_state: AdamState) -> None:
    # Round the live state to the checkpoint precision so a resumed run and
    # the uninterrupted run continue from identical parameters.
    for p in model.named().values():
        p.values = p.values.astype(np.float32).astype(np.float64)
    for store in (opt_state.m, opt_state.v):
        for name in store:
            store[name] = store[name].astype(np.float32).astype(np.float64)


def _snapshot(config: TrainConfig, step: int, vocab: Vocabulary, model: ModelParams,
              opt_state: AdamState) -> Checkpoint:
    return Checkpoint(
        version=CHECKPOINT_VERSION,
        config=config,
        step=step,
        vocab=vocab,
        params={name: p.values.copy() for name, p in model.named().items()},
        adam_m={name: arr.copy() for name, arr in opt_state.m.items()},
        adam_v={name: arr.copy() for name, arr in opt_state.v.items()},
        adam_t=opt_state.t,
    )


def train(config: TrainConfig, docs: list[Document], out_dir: str | Path | None = None,
          resume: Checkpoint | None = None,
          eval_hook: Callable[[int, ModelParams, Vocabulary], None] | None = None,
          ) -> tuple[Checkpoint, list[LossReport]]:
    """Run the training loop and return the final checkpoint plus loss reports.

    Batches are reshuffled once per epoch (an epoch is one pass over the
    eligible documents in a seeded permutation). When ``out_dir`` is given,
    a tab-separated loss log and periodic checkpoints are written there.
    ``eval_hook`` is called at every checkpoint boundary for logging only;
    it never alters training.
    """
    config.validate()
    eligible = [d for d in docs if len(d.sentences) >= 2]
    if len(eligible) < config.batch_pairs:
        raise ValueError(
            f"need {config.batch_pairs} documents with >= 2 sentences, found {len(eligible)}")

    if resume is not None:
        vocab = resume.vocab
        model = init_model(config, vocab.size)
        for name, p in model.named().items():
            if name not in resume.params:
                raise ValueError(f"checkpoint missing parameter '{name}'")
            if resume.params[name].shape != p.values.shape:
                raise ValueError(
                    f"checkpoint parameter '{name}' has shape {resume.params[name].shape}, "
                    f"expected {p.values.shape}")
            p.values = resume.params[name].copy()
        opt_state = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2,
                              eps=config.eps, t=resume.adam_t,
                              m={k: v.copy() for k, v in resume.adam_m.items()},
                              v={k: v.copy() for k, v in resume.adam_v.items()})
        start_step = resume.step
    else:
        vocab = build_vocab(docs, config.vocab_size)
        model = init_model(config, vocab.size)
        opt_state = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2,
                              eps=config.eps)
        start_step = 0

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    epoch_len = max(1, len(eligible) // config.batch_pairs)
    reports: list[LossReport] = []
    log_fh: io.TextIOBase | None = None
    if out_path is not None:
        log_fh = open(out_path / "loss.log", "w", encoding="utf-8")
    try:
        for step in range(start_step + 1, config.total_steps + 1):
            epoch, position = divmod(step - 1, epoch_len)
            perm = np.random.default_rng(
                [config.seed, _STREAM_EPOCH, epoch]).permutation(len(eligible))
            step_docs = [eligible[int(i)]
                         for i in perm[position * config.batch_pairs:
                                       (position + 1) * config.batch_pairs]]
            step_rng = np.random.default_rng([config.seed, _STREAM_STEP, step])
            batch = make_batch(step_docs, config.batch_pairs, step_rng,
                               config.max_doc_sentences)
            report = train_step(batch, model, opt_state, config, vocab, step)
            reports.append(report)
            if log_fh is not None:
                log_fh.write(report.log_line() + "\n")
                log_fh.flush()
            if step % config.checkpoint_every == 0:
                _quantize_state(model, opt_state)
                if out_path is not None:
                    save_checkpoint(_snapshot(config, step, vocab, model, opt_state),
                                    out_path / f"ckpt_step{step}.ckpt")
                if eval_hook is not None:
                    eval_hook(step, model, vocab)
    finally:
        if log_fh is not None:
            log_fh.close()

    _quantize_state(model, opt_state)
    final = _snapshot(config, max(config.total_steps, start_step), vocab, model, opt_state)
    if out_path is not None:
        save_checkpoint(final, out_path / "ckpt_final.ckpt")
    return final, reports


def model_from_checkpoint(ckpt: Checkpoint, requires_grad: bool = False) -> ModelParams:
    """Rebuild model parameters from checkpoint arrays."""
    model = init_model(ckpt.config, ckpt.vocab.size)
    for name, p in model.named().items():
        if name not in ckpt.params:
            raise ValueError(f"checkpoint missing parameter '{name}'")
        p.values = ckpt.params[name].copy()
        p.requires_grad = requires_grad
        p.zero_grad()
    return model


# ---------------------------------------------------------------------------
# Config files: flat "key = value" lines with '#' comments.
# ---------------------------------------------------------------------------

def parse_config_text(text: str) -> TrainConfig:
    """Parse a flat key=value config; unknown keys are an error."""
    known = {f.name: f.type for f in fields(TrainConfig)}
    overrides: dict = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {line_no}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ValueError(f"config line {line_no}: unknown key '{key}'")
        overrides[key] = _parse_config_value(key, value, line_no)
    config = TrainConfig(**overrides)
    config.validate()
    return config


def _parse_config_value(key: str, value: str, line_no: int):
    ftype = {f.name: f.type for f in fields(TrainConfig)}[key]
    try:
        if ftype in ("bool", bool):
            if value not in ("true", "false"):
                raise ValueError("expected true or false")
            return value == "true"
        if ftype in ("int", int):
            return int(value)
        return float(value)
    except ValueError as exc:
        raise ValueError(f"config line {line_no}: bad value for '{key}': {exc}") from exc


def load_config(path: str | Path) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())


# ---------------------------------------------------------------------------
# Checkpoint files: text header, then little-endian float32 payloads.
# ---------------------------------------------------------------------------

def _format_config_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value)


def _header_lines(ckpt: Checkpoint, array_order: list[str],
                  arrays: dict[str, np.ndarray]) -> list[str]:
    lines = [CHECKPOINT_MAGIC, f"version {ckpt.version}", f"step {ckpt.step}",
             f"seed {ckpt.config.seed}"]
    for f in fields(TrainConfig):
        lines.append(f"config {f.name} {_format_config_value(getattr(ckpt.config, f.name))}")
    lines.append(f"vocab {ckpt.vocab.n_docs} {len(ckpt.vocab.token_to_id)}")
    for token, token_id in sorted(ckpt.vocab.token_to_id.items(), key=lambda kv: kv[1]):
        lines.append(f"tok {token} {token_id} {ckpt.vocab.doc_freq[token]}")
    lines.append(f"adam_t {ckpt.adam_t}")
    for name in array_order:
        shape = "x".join(str(d) for d in arrays[name].shape)
        lines.append(f"array {name} {shape}")
    lines.append("end")
    return lines


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """Write magic, text header and float32 payloads in manifest order."""
    arrays: dict[str, np.ndarray] = dict(ckpt.params)
    for name, arr in ckpt.adam_m.items():
        arrays[f"adam_m.{name}"] = arr
    for name, arr in ckpt.adam_v.items():
        arrays[f"adam_v.{name}"] = arr
    array_order = sorted(arrays)
    header = "\n".join(_header_lines(ckpt, array_order, arrays)) + "\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8"))
        for name in array_order:
            fh.write(np.ascontiguousarray(arrays[name], dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Parse and verify a checkpoint file; arrays come back as float64."""
    blob = Path(path).read_bytes()
    marker = b"\nend\n"
    split = blob.find(marker)
    if split < 0:
        raise ValueError(f"{path}: missing header terminator")
    header = blob[:split].decode("utf-8").splitlines()
    payload = blob[split + len(marker):]

    if not header or header[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad magic, not a checkpoint file")
    meta: dict[str, str] = {}
    config_kv: dict[str, str] = {}
    tokens: list[tuple[str, int, int]] = []
    manifest: list[tuple[str, tuple[int, ...]]] = []
    for line in header[1:]:
        kind, _, rest = line.partition(" ")
        if kind == "config":
            key, _, value = rest.partition(" ")
            config_kv[key] = value
        elif kind == "tok":
            parts = rest.rsplit(" ", 2)  # tokens never contain whitespace
            if len(parts) != 3:
                raise ValueError(f"{path}: malformed vocab line '{line}'")
            tokens.append((parts[0], int(parts[1]), int(parts[2])))
        elif kind == "array":
            name, _, shape_str = rest.rpartition(" ")
            shape = tuple(int(d) for d in shape_str.split("x")) if shape_str else ()
            manifest.append((name, shape))
        else:
            meta[kind] = rest
    if int(meta.get("version", "-1")) != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported version {meta.get('version')}")

    known = {f.name: f.type for f in fields(TrainConfig)}
    overrides = {}
    for key, value in config_kv.items():
        if key not in known:
            raise ValueError(f"{path}: unknown config key '{key}'")
        overrides[key] = _parse_config_value(key, value, 0)
    config = TrainConfig(**overrides)

    n_docs_str, n_tokens_str = meta["vocab"].split()
    if len(tokens) != int(n_tokens_str):
        raise ValueError(f"{path}: vocab entry count mismatch")
    vocab = Vocabulary(
        token_to_id={token: token_id for token, token_id, _ in tokens},
        doc_freq={token: df for token, _, df in tokens},
        n_docs=int(n_docs_str),
    )

    expected = sum(int(np.prod(shape)) if shape else 1 for _, shape in manifest) * 4
    if len(payload) != expected:
        raise ValueError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in manifest:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        arrays[name] = arr.astype(np.float64).reshape(shape)
        offset += count * 4

    params = {n: a for n, a in arrays.items() if not n.startswith("adam_")}
    adam_m = {n[len("adam_m."):]: a for n, a in arrays.items() if n.startswith("adam_m.")}
    adam_v = {n[len("adam_v."):]: a for n, a in arrays.items() if n.startswith("adam_v.")}
    return Checkpoint(
        version=CHECKPOINT_VERSION,
        config=config,
        step=int(meta["step"]),
        vocab=vocab,
        params=params,
        adam_m=adam_m,
        adam_v=adam_v,
        adam_t=int(meta["adam_t"]),
    )
