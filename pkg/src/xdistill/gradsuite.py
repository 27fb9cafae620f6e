"""Finite-difference audit of every layer kind in the full model.

Builds a tiny two-stream model, one adaptation batch, and checks the
reverse-mode gradient of the combined loss against central differences for
one representative weight tensor per layer kind.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .adapt import MaskingSpec, adapt_losses, make_adapt_batch
from .crossmodal import CrossModalConfig, chunk_for_clip
from .encoder import EncoderConfig
from .model import CrossModalModel
from .numerics import Tensor, finite_difference_check
from .tokenizers import CLIP, LANGUAGE, Vocab, encode

# One named weight per layer kind the acceptance gate calls out.
CHECKED_TENSORS = {
    "embedding": "lang.tok_emb",
    "self_attention": "lang.layer0.attn.wq",
    "cross_attention_bridge": "cross.layer0.lang.cross.wk",
    "cross_attention_query": "cross.layer0.clip.cross.wq",
    "ffn": "cross.layer0.clip.ffn.w1",
    "layer_norm": "lang.layer0.attn_ln_g",
    "mlm_head": "head.mlm.w",
    "match_head": "head.match.w",
    "cliptc_head": "head.cliptc.w",
}


def _toy_vocab(stream: str, words: list[str]) -> Vocab:
    chars = sorted({c for w in words for c in w})
    if stream == LANGUAGE:
        base = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
        pieces = [c for ch in chars for c in (ch, "##" + ch)]
        toks = base + pieces + words
    else:
        base = ["<|pad|>", "<|unk|>", "<|startoftext|>", "<|endoftext|>"]
        pieces = [c for ch in chars for c in (ch, ch + "</w>")]
        toks = base + pieces + [w + "</w>" for w in words]
    return Vocab(toks, stream)


def build_toy_setup(seed: int = 0):
    words = ["cat", "dog", "sees", "ball", "red", "the"]
    lv = _toy_vocab(LANGUAGE, words)
    cv = _toy_vocab(CLIP, words)
    lang_cfg = EncoderConfig(hidden_dim=8, n_layers=1, n_heads=2, ffn_dim=12, vocab_size=len(lv), max_len=32, type_vocab_size=2)
    clip_cfg = EncoderConfig(hidden_dim=6, n_layers=1, n_heads=2, ffn_dim=10, vocab_size=len(cv), max_len=77)
    xc = CrossModalConfig(lang_dim=8, clip_dim=6, n_heads=2, lang_ffn_dim=12, clip_ffn_dim=10, n_cross_layers=1)
    model = CrossModalModel(lang_cfg, clip_cfg, xc, lv, cv, seed=seed)

    rng = np.random.default_rng(seed + 1)
    docs = [["the red cat sees the ball", "the dog sees the red ball", "the cat sees the dog"]]
    batch = make_adapt_batch(docs, lv, cv, MaskingSpec(), rng, lang_max_len=24)
    # 2 blocks instead of 9 keep the FD sweep fast; the math is identical.
    batch.clip = chunk_for_clip(encode(cv, batch.text[1]), "finetune_single", cv)
    flat = batch.clip.flat_ids()
    mask = batch.clip.flat_mask()
    batch.cliptc_positions = [i for i in range(len(flat)) if mask[i]][1:4]
    batch.cliptc_labels = [flat[i] for i in batch.cliptc_positions]
    # Make sure every head has work to do.
    if not any(l != -100 for l in batch.mlm_labels):
        batch.mlm_labels[1] = batch.language.ids[1]
    return model, batch


def check_tensor(model: CrossModalModel, batch, key: str, h: float = 1e-5) -> float:
    """Max relative FD error of the combined loss w.r.t. one named tensor."""
    params = model.params
    orig = params[key]

    def f(probe: Tensor) -> Tensor:
        params[key] = probe
        try:
            loss, _ = adapt_losses(model, batch)
            return loss
        finally:
            params[key] = orig

    return finite_difference_check(f, orig, h)


def run_gradient_suite(
    seed: int = 0, report: Callable[[str, float], None] | None = None
) -> dict[str, float]:
    model, batch = build_toy_setup(seed)
    errors = {}
    for kind, key in CHECKED_TENSORS.items():
        errors[kind] = check_tensor(model, batch, key)
        if report:
            report(kind, errors[kind])
    return errors
