"""Cross-modal encoder and the fixed-width clip-stream chunking scheme.

The clip stream has a hard 77-token window, so longer sequences are packed
into 77-wide blocks: 9 blocks (693 positions) during adaptation, 2 blocks
for single-sentence finetuning, 4 for sentence pairs with the sentences
never sharing a block.  Blocks are encoded independently by the clip
encoder and concatenated before the cross-modal layers, which attend over
the full concatenation.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .encoder import EncoderConfig, attention_block, encode_stream, feed_forward
from .numerics import Tensor, ops
from .tokenizers import CLIP, TokenSequence, Vocab

BLOCK_LEN = 77
ADAPT_BLOCKS = 9
SINGLE_BLOCKS = 2
PAIR_BLOCKS = 4


@dataclass
class CrossModalConfig:
    lang_dim: int
    clip_dim: int
    n_heads: int
    lang_ffn_dim: int
    clip_ffn_dim: int
    n_cross_layers: int = 2
    shared_dim: int = 0  # 0 -> use lang_dim
    layer_norm_eps: float = 1e-12

    def __post_init__(self):
        if self.n_cross_layers < 1:
            raise ValueError("n_cross_layers must be >= 1")
        if self.shared_dim == 0:
            self.shared_dim = self.lang_dim
        if self.shared_dim % self.n_heads != 0:
            raise ValueError(f"shared_dim {self.shared_dim} not divisible by n_heads {self.n_heads}")

    def to_json(self, path: str | Path):
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, path: str | Path) -> "CrossModalConfig":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class ChunkedSequence:
    blocks: list[TokenSequence]
    truncated: bool = False

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def flat_len(self) -> int:
        return self.n_blocks * BLOCK_LEN

    def flat_ids(self) -> list[int]:
        return [tid for b in self.blocks for tid in b.ids]

    def flat_mask(self) -> list[int]:
        return [m for b in self.blocks for m in b.attention_mask]

    def content_ids(self) -> list[int]:
        return [tid for b in self.blocks for tid, m in zip(b.ids, b.attention_mask) if m]


@dataclass
class CrossModalBatch:
    language: TokenSequence
    clip: ChunkedSequence
    segment_ids: list[int] | None = None
    match_label: int | None = None
    mlm_labels: list[int] = field(default_factory=list)
    cliptc_positions: list[int] = field(default_factory=list)
    cliptc_labels: list[int] = field(default_factory=list)
    # Original text kept for attention-map labeling.
    text: tuple[str, ...] = ()


def _truncate_keep_end(ids: list[int], capacity: int, end_id: int) -> tuple[list[int], bool]:
    if len(ids) <= capacity:
        return ids, False
    return ids[: capacity - 1] + [end_id], True


def _pack(ids: list[int], n_blocks: int, pad_id: int) -> list[TokenSequence]:
    padded = ids + [pad_id] * (n_blocks * BLOCK_LEN - len(ids))
    mask = [1] * len(ids) + [0] * (n_blocks * BLOCK_LEN - len(ids))
    return [
        TokenSequence(padded[i * BLOCK_LEN : (i + 1) * BLOCK_LEN], mask[i * BLOCK_LEN : (i + 1) * BLOCK_LEN], CLIP)
        for i in range(n_blocks)
    ]


def chunk_for_clip(seq: TokenSequence, mode: str, vocab: Vocab) -> ChunkedSequence:
    """Pack a clip-stream sequence into fixed 77-token blocks.

    adapt: pad to 693 and split into 9 blocks.
    finetune_single: 2 blocks (154-token budget).
    finetune_pair: 4 blocks; sentence 1 in blocks 0-1, sentence 2 in
    blocks 2-3, never sharing a block.

    Over-capacity content is truncated (the closing end token is kept) and
    the result is flagged.
    """
    ids = [tid for tid, m in zip(seq.ids, seq.attention_mask) if m]
    pad, end = vocab.pad_id, vocab.end_id
    if mode == "adapt":
        ids, trunc = _truncate_keep_end(ids, ADAPT_BLOCKS * BLOCK_LEN, end)
        return ChunkedSequence(_pack(ids, ADAPT_BLOCKS, pad), trunc)
    if mode == "finetune_single":
        ids, trunc = _truncate_keep_end(ids, SINGLE_BLOCKS * BLOCK_LEN, end)
        return ChunkedSequence(_pack(ids, SINGLE_BLOCKS, pad), trunc)
    if mode == "finetune_pair":
        # Split at the first sentence's end token.
        try:
            cut = ids.index(end) + 1
        except ValueError as exc:
            raise ValueError("pair chunking requires an end token closing sentence 1") from exc
        budget = 2 * BLOCK_LEN
        s1, t1 = _truncate_keep_end(ids[:cut], budget, end)
        s2, t2 = _truncate_keep_end(ids[cut:], budget, end)
        blocks = _pack(s1, 2, pad) + _pack(s2, 2, pad)
        return ChunkedSequence(blocks, t1 or t2)
    raise ValueError(f"unknown chunking mode {mode!r}")


def init_cross_weights(xc: CrossModalConfig, rng: np.random.Generator, prefix: str = "cross.") -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}

    def w(name, shape):
        params[prefix + name] = Tensor(rng.normal(0.0, 0.02, size=shape), requires_grad=True, name=prefix + name)

    def zeros(name, shape):
        params[prefix + name] = Tensor(np.zeros(shape), requires_grad=True, name=prefix + name)

    def one(name, shape):
        params[prefix + name] = Tensor(np.ones(shape), requires_grad=True, name=prefix + name)

    dims = {"lang": (xc.lang_dim, xc.clip_dim, xc.lang_ffn_dim), "clip": (xc.clip_dim, xc.lang_dim, xc.clip_ffn_dim)}
    for i in range(xc.n_cross_layers):
        for stream, (own, other, ffn) in dims.items():
            base = f"layer{i}.{stream}."
            for proj in ("wq", "wk", "wv", "wo"):
                w(base + "self." + proj, (own, own))
                zeros(base + "self." + proj + "_b", own)
            one(base + "self_ln_g", own)
            zeros(base + "self_ln_b", own)
            # Dimension bridging: Q from own stream, K/V from the other,
            # all projected into the shared attention dim.
            w(base + "cross.wq", (own, xc.shared_dim))
            zeros(base + "cross.wq_b", xc.shared_dim)
            w(base + "cross.wk", (other, xc.shared_dim))
            zeros(base + "cross.wk_b", xc.shared_dim)
            w(base + "cross.wv", (other, xc.shared_dim))
            zeros(base + "cross.wv_b", xc.shared_dim)
            w(base + "cross.wo", (xc.shared_dim, own))
            zeros(base + "cross.wo_b", own)
            one(base + "cross_ln_g", own)
            zeros(base + "cross_ln_b", own)
            w(base + "ffn.w1", (own, ffn))
            zeros(base + "ffn.b1", ffn)
            w(base + "ffn.w2", (ffn, own))
            zeros(base + "ffn.b2", own)
            one(base + "ffn_ln_g", own)
            zeros(base + "ffn_ln_b", own)
    return params


def cross_parameter_count(xc: CrossModalConfig) -> int:
    """Enumeration-based count of cross-modal weights (oracle by allocation)."""
    rng = np.random.default_rng(0)
    return sum(t.size for t in init_cross_weights(xc, rng).values())


class AttentionMaps:
    """Per-layer, per-head cross-attention probability maps for export."""

    def __init__(self):
        self.lang_to_clip: list[list[np.ndarray]] = []
        self.clip_to_lang: list[list[np.ndarray]] = []


def cross_forward(
    lang_cfg: EncoderConfig,
    clip_cfg: EncoderConfig,
    xc: CrossModalConfig,
    weights: dict[str, Tensor],
    batch: CrossModalBatch,
    disable_cross: bool = False,
) -> tuple[Tensor, Tensor, AttentionMaps]:
    """Encode both streams, then run the stacked cross-modal layers.

    Clip blocks are encoded independently (positions restart per block) and
    concatenated; cross-modal attention spans the full concatenation.
    With `disable_cross` the cross-attention contribution is exactly zero
    while its residual layer norm still applies.
    """
    lang_h = encode_stream(lang_cfg, weights, batch.language, batch.segment_ids, prefix="lang.")
    clip_parts = [encode_stream(clip_cfg, weights, block, prefix="clip.") for block in batch.clip.blocks]
    clip_h = ops.concat_rows(clip_parts)

    lang_mask = np.asarray(batch.language.attention_mask)
    clip_mask = np.asarray(batch.clip.flat_mask())
    maps = AttentionMaps()
    eps = xc.layer_norm_eps

    def p(name):
        return weights["cross." + name]

    for i in range(xc.n_cross_layers):
        states = {"lang": (lang_h, lang_mask), "clip": (clip_h, clip_mask)}
        post_self = {}
        for stream, (x, mask) in states.items():
            base = f"layer{i}.{stream}."
            attn, _ = attention_block(x, x, weights, "cross." + base + "self.", xc.n_heads, mask)
            post_self[stream] = ops.layer_norm(
                x + attn, p(base + "self_ln_g"), p(base + "self_ln_b"), eps
            )
        post_cross = {}
        layer_maps = {}
        for stream, other in (("lang", "clip"), ("clip", "lang")):
            base = f"layer{i}.{stream}."
            x = post_self[stream]
            cross, probs = attention_block(
                x, post_self[other], weights, "cross." + base + "cross.", xc.n_heads, states[other][1]
            )
            if disable_cross:
                cross = Tensor(np.zeros(x.shape))
            layer_maps[stream] = probs
            post_cross[stream] = ops.layer_norm(
                x + cross, p(base + "cross_ln_g"), p(base + "cross_ln_b"), eps
            )
        maps.lang_to_clip.append(layer_maps["lang"])
        maps.clip_to_lang.append(layer_maps["clip"])
        updated = {}
        for stream in ("lang", "clip"):
            base = f"layer{i}.{stream}."
            x = post_cross[stream]
            ffn = feed_forward(x, weights, "cross." + base + "ffn.")
            updated[stream] = ops.layer_norm(x + ffn, p(base + "ffn_ln_g"), p(base + "ffn_ln_b"), eps)
        lang_h, clip_h = updated["lang"], updated["clip"]

    return lang_h, clip_h, maps


def attention_entropy(
    maps: AttentionMaps,
    lang_query_mask: np.ndarray | None = None,
    clip_query_mask: np.ndarray | None = None,
) -> dict[str, list[list[float]]]:
    """Mean Shannon row entropy (nats) per direction, layer, and head.

    Pad-query rows are excluded when the matching query mask is given;
    pad-key columns carry zero probability already and contribute nothing
    (0 log 0 = 0).  Queries in lang_to_clip are language positions, in
    clip_to_lang clip positions.
    """
    out: dict[str, list[list[float]]] = {}
    for direction, layers, query_mask in (
        ("lang_to_clip", maps.lang_to_clip, lang_query_mask),
        ("clip_to_lang", maps.clip_to_lang, clip_query_mask),
    ):
        per_layer = []
        for heads in layers:
            per_head = []
            for probs in heads:
                rows = probs if query_mask is None else probs[np.asarray(query_mask[: probs.shape[0]]) > 0]
                with np.errstate(divide="ignore", invalid="ignore"):
                    term = np.where(rows > 0, rows * np.log(rows), 0.0)
                per_head.append(float(-term.sum(axis=-1).mean()))
            per_layer.append(per_head)
        out[direction] = per_layer
    return out


def export_attention_maps(
    maps: AttentionMaps,
    lang_tokens: list[str],
    clip_tokens: list[str],
    out_dir: str | Path,
) -> list[Path]:
    """One CSV per (direction, layer, head): rows = query tokens, columns =
    key tokens, cells = attention probability."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for direction, layers, row_toks, col_toks in (
        ("lang_to_clip", maps.lang_to_clip, lang_tokens, clip_tokens),
        ("clip_to_lang", maps.clip_to_lang, clip_tokens, lang_tokens),
    ):
        for li, heads in enumerate(layers):
            for hi, probs in enumerate(heads):
                path = out_dir / f"attn_{direction}_layer{li}_head{hi}.csv"
                with path.open("w", newline="", encoding="utf-8") as f:
                    writer = csv.writer(f)
                    writer.writerow([""] + col_toks[: probs.shape[1]])
                    for r, tok in zip(probs, row_toks):
                        writer.writerow([tok] + [f"{x:.6f}" for x in r])
                written.append(path)
    return written
