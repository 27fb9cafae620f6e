"""Adaptation-phase training: batch construction with the 15% / 80-10-10
masking recipe, the three objectives (joint MLM, same-sentence MATCH, clip
token classification), the training loop, and a toy contrastive
pretraining stage for the clip stream.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .crossmodal import CrossModalBatch, chunk_for_clip, cross_forward
from .encoder import encode_stream
from .model import CrossModalModel
from .numerics import AdamState, Tape, Tensor, ops
from .tokenizers import CorpusError, TokenSequence, Vocab, encode, segment_ids

IGNORE = -100


class NumericError(RuntimeError):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass
class MaskingSpec:
    select_ratio: float = 0.15
    mask_prob: float = 0.8
    random_prob: float = 0.1
    keep_prob: float = 0.1

    def __post_init__(self):
        if abs(self.mask_prob + self.random_prob + self.keep_prob - 1.0) > 1e-12:
            raise ValueError("mask/random/keep probabilities must sum to 1")


@dataclass
class AdaptLoss:
    mlm: float
    match: float
    cliptc: float
    total: float
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0)


@dataclass
class AdaptConfig:
    epochs: int = 1
    batch_size: int = 8
    lr: float = 1e-4
    warmup_ratio: float = 0.05
    objectives: tuple[str, ...] = ("mlm", "match", "cliptc")
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    lang_max_len: int = 0  # 0 -> encoder max_len
    seed: int = 0

    def __post_init__(self):
        unknown = set(self.objectives) - {"mlm", "match", "cliptc"}
        if unknown:
            raise ValueError(f"unknown objectives {sorted(unknown)}")
        if not self.objectives:
            raise ValueError("at least one adaptation objective must be enabled")


def _compose_text(doc: list[str], start: int, lang_vocab: Vocab, budget: int) -> str:
    """Concatenate consecutive sentences from one document while the
    language-side encoding stays within budget."""
    text = doc[start]
    for nxt in doc[start + 1 :]:
        candidate = text + " " + nxt
        if len(encode(lang_vocab, candidate)) > budget:
            break
        text = candidate
    return text


def mask_language_tokens(
    seq: TokenSequence, vocab: Vocab, spec: MaskingSpec, rng: np.random.Generator
) -> tuple[TokenSequence, list[int]]:
    """Apply the BERT masking recipe to non-special positions.

    Returns the corrupted sequence and per-position labels (original id at
    selected positions, IGNORE elsewhere).
    """
    specials = vocab.special_ids
    ids = list(seq.ids)
    labels = [IGNORE] * len(ids)
    for i, tid in enumerate(ids):
        if tid in specials or seq.attention_mask[i] == 0:
            continue
        if rng.random() >= spec.select_ratio:
            continue
        labels[i] = tid
        roll = rng.random()
        if roll < spec.mask_prob:
            ids[i] = vocab.mask_id
        elif roll < spec.mask_prob + spec.random_prob:
            ids[i] = int(rng.integers(len(vocab)))
        # else: keep the original token
    return TokenSequence(ids, list(seq.attention_mask), seq.stream), labels


def make_adapt_batch(
    docs: list[list[str]],
    lang_vocab: Vocab,
    clip_vocab: Vocab,
    spec: MaskingSpec,
    rng: np.random.Generator,
    lang_max_len: int = 512,
    cliptc_ratio: float = 0.15,
) -> CrossModalBatch:
    """One adaptation example: masked language side, never-masked clip side,
    50% mismatched clip text for the MATCH label, 15% clip positions as
    token-classification targets."""
    sentences = [s for d in docs for s in d]
    if len(sentences) < 2:
        raise CorpusError("need at least 2 sentences to sample a negative MATCH pair")

    doc = docs[int(rng.integers(len(docs)))]
    start = int(rng.integers(len(doc)))
    text = _compose_text(doc, start, lang_vocab, lang_max_len)

    lang_clean = encode(lang_vocab, text)
    if len(lang_clean) > lang_max_len:
        ids = lang_clean.ids[: lang_max_len - 1] + [lang_vocab.sep_id]
        lang_clean = TokenSequence(ids, [1] * lang_max_len, lang_clean.stream)
    lang_seq, mlm_labels = mask_language_tokens(lang_clean, lang_vocab, spec, rng)

    if rng.random() < 0.5:
        clip_text, match_label = text, 1
    else:
        while True:
            other = sentences[int(rng.integers(len(sentences)))]
            if other != text:
                break
        clip_text, match_label = other, 0

    chunked = chunk_for_clip(encode(clip_vocab, clip_text), "adapt", clip_vocab)
    flat_ids = chunked.flat_ids()
    flat_mask = chunked.flat_mask()
    positions = [i for i, m in enumerate(flat_mask) if m]
    cliptc_positions = [i for i in positions if rng.random() < cliptc_ratio]
    cliptc_labels = [flat_ids[i] for i in cliptc_positions]

    return CrossModalBatch(
        language=lang_seq,
        clip=chunked,
        segment_ids=segment_ids(lang_vocab, lang_seq),
        match_label=match_label,
        mlm_labels=mlm_labels,
        cliptc_positions=cliptc_positions,
        cliptc_labels=cliptc_labels,
        text=(text, clip_text),
    )


def adapt_losses(
    model: CrossModalModel,
    batch: CrossModalBatch,
    objectives: tuple[str, ...] = ("mlm", "match", "cliptc"),
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> tuple[Tensor, AdaptLoss]:
    """Forward the full model and combine the enabled objective losses.

    Disabled objectives (and a missing match label) contribute exactly 0
    and are excluded from the total.
    """
    p = model.params
    lang_h, clip_h, _ = cross_forward(model.lang_cfg, model.clip_cfg, model.cross_cfg, p, batch)
    zero = Tensor(0.0)
    w_mlm, w_match, w_cliptc = loss_weights

    mlm = zero
    if "mlm" in objectives and any(l != IGNORE for l in batch.mlm_labels):
        logits = ops.matmul(lang_h, p["head.mlm.w"]) + p["head.mlm.b"]
        mlm = ops.cross_entropy(logits, batch.mlm_labels, IGNORE)

    match = zero
    if "match" in objectives and batch.match_label is not None:
        cls = ops.gather_rows(lang_h, [0])
        logits = ops.matmul(cls, p["head.match.w"]) + p["head.match.b"]
        match = ops.cross_entropy(logits, [batch.match_label])

    cliptc = zero
    if "cliptc" in objectives and batch.cliptc_positions:
        sel = ops.gather_rows(clip_h, batch.cliptc_positions)
        logits = ops.matmul(sel, p["head.cliptc.w"]) + p["head.cliptc.b"]
        cliptc = ops.cross_entropy(logits, batch.cliptc_labels)

    total = Tensor(w_mlm) * mlm + Tensor(w_match) * match + Tensor(w_cliptc) * cliptc
    record = AdaptLoss(mlm.item(), match.item(), cliptc.item(), total.item(), loss_weights)
    return total, record


def run_adaptation(
    model: CrossModalModel, docs: list[list[str]], config: AdaptConfig
) -> list[dict]:
    """Train all weights on the adaptation objectives; returns the per-step
    loss history.  Bitwise deterministic for a fixed config."""
    rng = np.random.default_rng(config.seed)
    spec = MaskingSpec()
    lang_max = config.lang_max_len or model.lang_cfg.max_len
    n_examples = sum(len(d) for d in docs)
    steps_per_epoch = max(1, n_examples // config.batch_size)
    total_steps = steps_per_epoch * config.epochs
    opt = AdamState(
        model.params,
        base_lr=config.lr,
        warmup_ratio=config.warmup_ratio,
        total_steps=total_steps,
    )

    history: list[dict] = []
    step = 0
    for epoch in range(config.epochs):
        for _ in range(steps_per_epoch):
            lr = opt.effective_lr(step)
            with Tape() as tape:
                totals = []
                comps = np.zeros(3)
                for _ in range(config.batch_size):
                    batch = make_adapt_batch(docs, model.lang_vocab, model.clip_vocab, spec, rng, lang_max)
                    loss, record = adapt_losses(model, batch, config.objectives, config.loss_weights)
                    totals.append(loss)
                    comps += (record.mlm, record.match, record.cliptc)
                mean_loss = ops.mean_all(ops.concat_rows([ops.reshape(t, (1, 1)) for t in totals]))
                if not np.isfinite(mean_loss.item()):
                    raise NumericError(step, f"non-finite adaptation loss {mean_loss.item()}")
                tape.backward(mean_loss)
            opt.step()
            opt.zero_grad()
            comps /= config.batch_size
            history.append(
                {
                    "step": step,
                    "epoch": epoch,
                    "mlm": comps[0],
                    "match": comps[1],
                    "cliptc": comps[2],
                    "total": mean_loss.item(),
                    "lr": lr,
                }
            )
            step += 1
    return history


def write_history_csv(history: list[dict], path: str | Path, config_hash: str = ""):
    path = Path(path)
    fields = list(history[0].keys()) if history else ["step"]
    with path.open("w", newline="", encoding="utf-8") as f:
        if config_hash:
            f.write(f"# config_hash={config_hash}\n")
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for row in history:
            writer.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()})


def _normalize_rows(h: Tensor) -> Tensor:
    norm = ops.sqrt(ops.sum_axis(ops.square(h), axis=1, keepdims=True))
    return h / norm


@dataclass
class ContrastiveConfig:
    steps: int = 300
    lr: float = 1e-3
    temperature: float = 0.1
    seed: int = 0


def toy_contrastive_pretrain(
    model: CrossModalModel,
    pairs: list[tuple[str, np.ndarray]],
    config: ContrastiveConfig,
) -> list[dict]:
    """Train the clip stream so paired (sentence, target vector) inputs end
    up with high cosine similarity and non-pairs with low.

    Symmetric InfoNCE over the cosine-similarity matrix between the
    L2-normalized start-token outputs and the unit-norm targets.
    """
    if len(pairs) < 2:
        raise ValueError("contrastive pretraining needs at least 2 pairs (no negatives otherwise)")
    d = model.clip_cfg.hidden_dim
    targets = np.stack([np.asarray(v, dtype=np.float64) for _, v in pairs])
    if targets.shape[1] != d:
        raise ValueError(f"target dim {targets.shape[1]} != clip hidden dim {d}")
    if np.abs(np.linalg.norm(targets, axis=1) - 1.0).max() > 1e-8:
        raise ValueError("target vectors must be unit-norm")

    seqs = [encode(model.clip_vocab, s) for s, _ in pairs]
    clip_params = model.subset("clip.")
    opt = AdamState(clip_params, base_lr=config.lr, warmup_ratio=0.0, total_steps=config.steps)
    tgt = Tensor(targets)
    labels = list(range(len(pairs)))
    history = []
    for step in range(config.steps):
        with Tape() as tape:
            outs = [ops.gather_rows(encode_stream(model.clip_cfg, model.params, s, prefix="clip."), [0]) for s in seqs]
            h = _normalize_rows(ops.concat_rows(outs))
            logits = ops.matmul(h, ops.transpose(tgt)) * Tensor(1.0 / config.temperature)
            loss = (ops.cross_entropy(logits, labels) + ops.cross_entropy(ops.transpose(logits), labels)) * Tensor(0.5)
            tape.backward(loss)
        opt.step()
        opt.zero_grad()
        history.append({"step": step, "loss": loss.item(), "lr": opt.effective_lr(step)})
    return history


def clip_start_embeddings(model: CrossModalModel, sentences: list[str]) -> np.ndarray:
    """L2-normalized start-token outputs of the clip encoder (no grads)."""
    rows = []
    for s in sentences:
        h = encode_stream(model.clip_cfg, model.params, encode(model.clip_vocab, s), prefix="clip.")
        v = h.data[0]
        rows.append(v / np.linalg.norm(v))
    return np.stack(rows)
