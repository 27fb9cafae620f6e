"""Single-modality transformer encoder, parameterizable as either stream.

The language stream uses segment embeddings and a pooler; the clip stream
uses neither and treats its start token as the sequence summary.  Both
share the same layer stack: post-LN residual self-attention followed by a
GELU feed-forward block.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .numerics import Tensor, ops
from .numerics.tensor import ShapeError
from .tokenizers import TokenSequence

NEG_INF = -1e30  # additive mask; finite so max-subtraction keeps softmax NaN-free


class LengthError(ValueError):
    pass


@dataclass
class EncoderConfig:
    hidden_dim: int
    n_layers: int
    n_heads: int
    ffn_dim: int
    vocab_size: int
    max_len: int
    type_vocab_size: int = 0
    layer_norm_eps: float = 1e-12
    has_pooler: bool = False

    def __post_init__(self):
        if self.hidden_dim % self.n_heads != 0:
            raise ValueError(f"hidden_dim {self.hidden_dim} not divisible by n_heads {self.n_heads}")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")

    def to_json(self, path: str | Path):
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, path: str | Path) -> "EncoderConfig":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


def count_parameters(c: EncoderConfig) -> int:
    """Closed-form scalar count of a freshly allocated weight set."""
    d = c.hidden_dim
    emb = (c.vocab_size + c.max_len + c.type_vocab_size) * d + 2 * d
    per_layer = 4 * (d * d + d) + 2 * d + (d * c.ffn_dim + c.ffn_dim) + (c.ffn_dim * d + d) + 2 * d
    total = emb + c.n_layers * per_layer
    if c.has_pooler:
        total += d * d + d
    return total


def init_encoder_weights(c: EncoderConfig, rng: np.random.Generator, prefix: str = "") -> dict[str, Tensor]:
    """BERT-style init: normal(0, 0.02) weights, zero biases, unit LN gains."""

    def w(name, shape):
        params[prefix + name] = Tensor(rng.normal(0.0, 0.02, size=shape), requires_grad=True, name=prefix + name)

    def zeros(name, shape):
        params[prefix + name] = Tensor(np.zeros(shape), requires_grad=True, name=prefix + name)

    def one(name, shape):
        params[prefix + name] = Tensor(np.ones(shape), requires_grad=True, name=prefix + name)

    d = c.hidden_dim
    params: dict[str, Tensor] = {}
    w("tok_emb", (c.vocab_size, d))
    w("pos_emb", (c.max_len, d))
    if c.type_vocab_size:
        w("seg_emb", (c.type_vocab_size, d))
    one("emb_ln_g", d)
    zeros("emb_ln_b", d)
    for i in range(c.n_layers):
        base = f"layer{i}."
        for proj in ("wq", "wk", "wv", "wo"):
            w(base + "attn." + proj, (d, d))
            zeros(base + "attn." + proj + "_b", d)
        one(base + "attn_ln_g", d)
        zeros(base + "attn_ln_b", d)
        w(base + "ffn.w1", (d, c.ffn_dim))
        zeros(base + "ffn.b1", c.ffn_dim)
        w(base + "ffn.w2", (c.ffn_dim, d))
        zeros(base + "ffn.b2", d)
        one(base + "ffn_ln_g", d)
        zeros(base + "ffn_ln_b", d)
    if c.has_pooler:
        w("pooler.w", (d, d))
        zeros("pooler.b", d)
    return params


def attention_block(
    queries: Tensor,
    keys: Tensor,
    weights: dict[str, Tensor],
    prefix: str,
    n_heads: int,
    key_mask: np.ndarray,
):
    """Multi-head attention with an additive key mask.

    Returns the projected output plus the per-head probability maps
    (plain arrays, detached from the graph).
    """
    q = ops.matmul(queries, weights[prefix + "wq"]) + weights[prefix + "wq_b"]
    k = ops.matmul(keys, weights[prefix + "wk"]) + weights[prefix + "wk_b"]
    v = ops.matmul(keys, weights[prefix + "wv"]) + weights[prefix + "wv_b"]
    attn_dim = q.shape[1]
    dh = attn_dim // n_heads
    mask_row = Tensor(np.where(np.asarray(key_mask) > 0, 0.0, NEG_INF))
    contexts = []
    probs = []
    for h in range(n_heads):
        qh = ops.slice_cols(q, h * dh, (h + 1) * dh)
        kh = ops.slice_cols(k, h * dh, (h + 1) * dh)
        vh = ops.slice_cols(v, h * dh, (h + 1) * dh)
        scores = ops.matmul(qh, ops.transpose(kh)) * Tensor(1.0 / math.sqrt(dh))
        p = ops.softmax_rows(scores + mask_row)
        probs.append(p.data.copy())
        contexts.append(ops.matmul(p, vh))
    merged = contexts[0] if n_heads == 1 else ops.concat_cols(contexts)
    out = ops.matmul(merged, weights[prefix + "wo"]) + weights[prefix + "wo_b"]
    return out, probs


def feed_forward(x: Tensor, weights: dict[str, Tensor], prefix: str) -> Tensor:
    hidden = ops.gelu(ops.matmul(x, weights[prefix + "w1"]) + weights[prefix + "b1"])
    return ops.matmul(hidden, weights[prefix + "w2"]) + weights[prefix + "b2"]


def encode_stream(
    c: EncoderConfig,
    weights: dict[str, Tensor],
    seq: TokenSequence,
    segment_ids: list[int] | None = None,
    prefix: str = "",
) -> Tensor:
    """Run the full encoder stack over one token sequence.

    Masked (padding) positions contribute nothing to any attention output;
    their own hidden states are computed but carry no information.
    """
    n = len(seq.ids)
    if n > c.max_len:
        raise LengthError(f"sequence length {n} exceeds max_len {c.max_len}")
    ids = np.asarray(seq.ids)
    if ids.max(initial=0) >= c.vocab_size:
        raise IndexError(f"token id {ids.max()} out of range for vocab {c.vocab_size}")

    def p(name):
        return weights[prefix + name]

    x = ops.gather_rows(p("tok_emb"), ids) + ops.gather_rows(p("pos_emb"), np.arange(n))
    if c.type_vocab_size:
        seg = np.zeros(n, dtype=int) if segment_ids is None else np.asarray(segment_ids)
        x = x + ops.gather_rows(p("seg_emb"), seg)
    x = ops.layer_norm(x, p("emb_ln_g"), p("emb_ln_b"), c.layer_norm_eps)

    mask = np.asarray(seq.attention_mask)
    for i in range(c.n_layers):
        base = f"layer{i}."
        attn_out, _ = attention_block(x, x, weights, prefix + base + "attn.", c.n_heads, mask)
        x = ops.layer_norm(x + attn_out, p(base + "attn_ln_g"), p(base + "attn_ln_b"), c.layer_norm_eps)
        ffn_out = feed_forward(x, weights, prefix + base + "ffn.")
        x = ops.layer_norm(x + ffn_out, p(base + "ffn_ln_g"), p(base + "ffn_ln_b"), c.layer_norm_eps)
    return x


def pooled_output(c: EncoderConfig, weights: dict[str, Tensor], hidden: Tensor, prefix: str = "") -> Tensor:
    """tanh-squashed affine over the first position's final hidden state."""
    first = ops.gather_rows(hidden, [0])
    return ops.tanh(ops.matmul(first, weights[prefix + "pooler.w"]) + weights[prefix + "pooler.b"])


# Table-shaped presets for the published configurations; toy configs are
# built ad hoc in tests and run configs.
BERT_BASE = EncoderConfig(
    hidden_dim=768, n_layers=12, n_heads=12, ffn_dim=3072,
    vocab_size=30522, max_len=512, type_vocab_size=2, has_pooler=True,
)
BERT_LARGE = EncoderConfig(
    hidden_dim=1024, n_layers=24, n_heads=16, ffn_dim=4096,
    vocab_size=30522, max_len=512, type_vocab_size=2, has_pooler=True,
)
CLIP_TEXT = EncoderConfig(
    hidden_dim=512, n_layers=12, n_heads=8, ffn_dim=2048,
    vocab_size=49408, max_len=77, type_vocab_size=0, has_pooler=False,
)
