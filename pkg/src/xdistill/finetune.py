"""Task heads, metrics, and the finetuning loop for the extracted language
encoder (and optionally the full cross-modal model)."""

from __future__ import annotations

import csv
import statistics
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import stats as spstats

from .crossmodal import chunk_for_clip, cross_forward
from .encoder import EncoderConfig, encode_stream
from .model import CrossModalModel
from .numerics import AdamState, Tape, Tensor, ops
from .tokenizers import TokenSequence, Vocab, encode, segment_ids

METRICS = ("accuracy", "f1", "matthews", "pearson_spearman", "rmse")


class SchemaError(ValueError):
    pass


@dataclass
class TaskSpec:
    name: str
    arity: str = "single"  # or "pair"
    target: str = "classification"  # or "regression"
    n_labels: int = 2
    metric: str = "accuracy"
    lr: float = 1e-4
    epochs: int = 3
    batch_size: int = 32
    warmup_ratio: float = 0.1
    epoch_decay: float = 0.9

    def __post_init__(self):
        if self.arity not in ("single", "pair"):
            raise ValueError(f"bad arity {self.arity!r}")
        if self.target not in ("classification", "regression"):
            raise ValueError(f"bad target {self.target!r}")
        if self.metric not in METRICS:
            raise ValueError(f"bad metric {self.metric!r}")


@dataclass
class LabeledExample:
    sentence1: str
    sentence2: str | None
    label: float | int


def load_task(tsv_path: str | Path, spec: TaskSpec) -> list[LabeledExample]:
    """Parse a GLUE-style TSV (header row: sentence1 [sentence2] label)."""
    path = Path(tsv_path)
    with path.open(encoding="utf-8") as f:
        reader = csv.DictReader(f, delimiter="\t")
        cols = reader.fieldnames or []
        required = ["sentence1", "label"] + (["sentence2"] if spec.arity == "pair" else [])
        missing = [c for c in required if c not in cols]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing} (found {cols})")
        examples = []
        bad: list[str] = []
        for lineno, row in enumerate(reader, start=2):
            try:
                s1 = (row["sentence1"] or "").strip()
                s2 = (row.get("sentence2") or "").strip() if spec.arity == "pair" else None
                if not s1 or (spec.arity == "pair" and not s2):
                    raise ValueError("empty sentence")
                if spec.target == "classification":
                    label = int(row["label"])
                    if not 0 <= label < spec.n_labels:
                        raise ValueError(f"label {label} outside [0, {spec.n_labels})")
                else:
                    label = float(row["label"])
                    if not np.isfinite(label):
                        raise ValueError(f"non-finite label {label}")
                examples.append(LabeledExample(s1, s2, label))
            except ValueError as exc:
                bad.append(f"line {lineno}: {exc}")
        if bad:
            raise SchemaError(f"{path}: malformed rows:\n  " + "\n  ".join(bad))
    return examples


def save_task(examples: list[LabeledExample], spec: TaskSpec, tsv_path: str | Path):
    with Path(tsv_path).open("w", newline="", encoding="utf-8") as f:
        cols = ["sentence1"] + (["sentence2"] if spec.arity == "pair" else []) + ["label"]
        writer = csv.writer(f, delimiter="\t")
        writer.writerow(cols)
        for ex in examples:
            row = [ex.sentence1] + ([ex.sentence2] if spec.arity == "pair" else []) + [ex.label]
            writer.writerow(row)


# ---------------------------------------------------------------- metrics


def matthews_corr(preds: np.ndarray, labels: np.ndarray) -> tuple[float, bool]:
    """Binary Matthews correlation; (0.0, True) when the denominator is 0."""
    tp = int(np.sum((preds == 1) & (labels == 1)))
    tn = int(np.sum((preds == 0) & (labels == 0)))
    fp = int(np.sum((preds == 1) & (labels == 0)))
    fn = int(np.sum((preds == 0) & (labels == 1)))
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0, True
    return (tp * tn - fp * fn) / np.sqrt(denom), False


def compute_metric(predictions, labels, kind: str) -> float:
    preds = np.asarray(predictions, dtype=np.float64)
    labs = np.asarray(labels, dtype=np.float64)
    if preds.shape != labs.shape or preds.size == 0:
        raise ValueError(f"predictions {preds.shape} and labels {labs.shape} must match and be non-empty")
    if kind == "accuracy":
        return float(np.mean(preds == labs))
    if kind == "f1":
        tp = np.sum((preds == 1) & (labs == 1))
        fp = np.sum((preds == 1) & (labs == 0))
        fn = np.sum((preds == 0) & (labs == 1))
        return float(2 * tp / (2 * tp + fp + fn)) if (2 * tp + fp + fn) else 0.0
    if kind == "matthews":
        value, degenerate = matthews_corr(preds.astype(int), labs.astype(int))
        if degenerate:
            warnings.warn("Matthews correlation undefined (single-class confusion matrix); reporting 0")
        return float(value)
    if kind == "pearson_spearman":
        if np.std(preds) == 0 or np.std(labs) == 0:
            return 0.0
        pearson = spstats.pearsonr(preds, labs).statistic
        spearman = spstats.spearmanr(preds, labs).statistic
        return float((pearson + spearman) / 2.0)
    if kind == "rmse":
        return float(np.sqrt(np.mean((preds - labs) ** 2)))
    raise ValueError(f"unknown metric {kind!r}")


def metric_optimum_is_low(kind: str) -> bool:
    return kind == "rmse"


# ---------------------------------------------------------------- finetuning


def init_task_head(spec: TaskSpec, hidden_dim: int, rng: np.random.Generator) -> dict[str, Tensor]:
    out_dim = spec.n_labels if spec.target == "classification" else 1
    return {
        "task.w": Tensor(rng.normal(0.0, 0.02, size=(hidden_dim, out_dim)), requires_grad=True, name="task.w"),
        "task.b": Tensor(np.zeros(out_dim), requires_grad=True, name="task.b"),
    }


def _encoder_cls(cfg: EncoderConfig, weights: dict[str, Tensor], vocab: Vocab, ex: LabeledExample) -> Tensor:
    seq = encode(vocab, ex.sentence1, ex.sentence2)
    if len(seq) > cfg.max_len:
        ids = seq.ids[: cfg.max_len - 1] + [vocab.sep_id]
        seq = TokenSequence(ids, [1] * cfg.max_len, seq.stream)
    hidden = encode_stream(cfg, weights, seq, segment_ids(vocab, seq))
    return ops.gather_rows(hidden, [0])


def _full_model_cls(model: CrossModalModel, ex: LabeledExample) -> Tensor:
    from .crossmodal import CrossModalBatch

    lang_seq = encode(model.lang_vocab, ex.sentence1, ex.sentence2)
    if len(lang_seq) > model.lang_cfg.max_len:
        ids = lang_seq.ids[: model.lang_cfg.max_len - 1] + [model.lang_vocab.sep_id]
        lang_seq = TokenSequence(ids, [1] * model.lang_cfg.max_len, lang_seq.stream)
    mode = "finetune_pair" if ex.sentence2 is not None else "finetune_single"
    clip_seq = encode(model.clip_vocab, ex.sentence1, ex.sentence2)
    batch = CrossModalBatch(
        language=lang_seq,
        clip=chunk_for_clip(clip_seq, mode, model.clip_vocab),
        segment_ids=segment_ids(model.lang_vocab, lang_seq),
    )
    lang_h, _, _ = cross_forward(model.lang_cfg, model.clip_cfg, model.cross_cfg, model.params, batch)
    return ops.gather_rows(lang_h, [0])


def finetune(
    cls_fn: Callable[[LabeledExample], Tensor],
    trainable: dict[str, Tensor],
    hidden_dim: int,
    train: list[LabeledExample],
    dev: list[LabeledExample],
    spec: TaskSpec,
    seed: int = 0,
) -> tuple[dict[str, Tensor], list[dict]]:
    """Train a task head (and whatever is in `trainable`) for spec.epochs
    with linear warmup and per-epoch lr decay; evaluates dev every epoch.

    `cls_fn` maps an example to its [CLS]-analog hidden row; passing the
    encoder weights inside `trainable` finetunes them too, passing only the
    head trains a probe.
    """
    rng = np.random.default_rng(seed)
    head = init_task_head(spec, hidden_dim, rng)
    params = dict(trainable)
    params.update(head)
    steps_per_epoch = max(1, len(train) // spec.batch_size)
    opt = AdamState(
        params,
        base_lr=spec.lr,
        warmup_ratio=spec.warmup_ratio,
        total_steps=steps_per_epoch * spec.epochs,
        epoch_decay=spec.epoch_decay,
    )

    def head_logits(ex: LabeledExample) -> Tensor:
        return ops.matmul(cls_fn(ex), head["task.w"]) + head["task.b"]

    history = []
    order = np.arange(len(train))
    for epoch in range(spec.epochs):
        rng.shuffle(order)
        epoch_loss = 0.0
        for s in range(steps_per_epoch):
            idx = order[s * spec.batch_size : (s + 1) * spec.batch_size]
            if idx.size == 0:
                continue
            with Tape() as tape:
                losses = []
                for j in idx:
                    ex = train[j]
                    logits = head_logits(ex)
                    if spec.target == "classification":
                        losses.append(ops.cross_entropy(logits, [int(ex.label)]))
                    else:
                        losses.append(ops.mean_all(ops.square(logits - Tensor(float(ex.label)))))
                loss = ops.mean_all(ops.concat_rows([ops.reshape(l, (1, 1)) for l in losses]))
                tape.backward(loss)
            opt.step(epoch=epoch)
            opt.zero_grad()
            epoch_loss += loss.item()
        preds, labels = predict(head_logits, dev, spec)
        score = compute_metric(preds, labels, spec.metric)
        history.append(
            {
                "epoch": epoch,
                "train_loss": epoch_loss / steps_per_epoch,
                "dev_metric": score,
                "lr": opt.effective_lr(opt.step_count, epoch),
            }
        )
    return head, history


def predict(head_logits: Callable[[LabeledExample], Tensor], examples: list[LabeledExample], spec: TaskSpec):
    preds = []
    labels = []
    for ex in examples:
        out = head_logits(ex).data[0]
        preds.append(float(np.argmax(out)) if spec.target == "classification" else float(out[0]))
        labels.append(float(ex.label))
    return np.asarray(preds), np.asarray(labels)


def finetune_encoder(
    cfg: EncoderConfig,
    weights: dict[str, Tensor],
    vocab: Vocab,
    train: list[LabeledExample],
    dev: list[LabeledExample],
    spec: TaskSpec,
    seed: int = 0,
):
    """The extracted-encoder path: only language weights plus the head."""
    return finetune(
        lambda ex: _encoder_cls(cfg, weights, vocab, ex),
        weights,
        cfg.hidden_dim,
        train,
        dev,
        spec,
        seed,
    )


def finetune_full_model(
    model: CrossModalModel,
    train: list[LabeledExample],
    dev: list[LabeledExample],
    spec: TaskSpec,
    seed: int = 0,
):
    """The full cross-modal path: all weights participate."""
    return finetune(
        lambda ex: _full_model_cls(model, ex),
        model.params,
        model.lang_cfg.hidden_dim,
        train,
        dev,
        spec,
        seed,
    )


def median_of_runs(run_fn: Callable[[int], float], seeds: list[int]) -> dict:
    """Run `run_fn` once per seed and report the median final metric."""
    if not seeds:
        raise ValueError("need at least one seed")
    raw = [float(run_fn(seed)) for seed in seeds]
    return {"seeds": list(seeds), "raw_scores": raw, "median": float(statistics.median(raw))}
