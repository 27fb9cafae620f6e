"""Clip-stream chunking properties, cross-modal parameter enumeration, and
the forward pass invariants."""

import numpy as np
import pytest

from xdistill import tokenizers as tk
from xdistill.crossmodal import (
    ADAPT_BLOCKS,
    BLOCK_LEN,
    CrossModalBatch,
    CrossModalConfig,
    attention_entropy,
    chunk_for_clip,
    cross_forward,
    cross_parameter_count,
    init_cross_weights,
)
from xdistill.encoder import EncoderConfig, init_encoder_weights
from xdistill.numerics import Tensor, no_grad


@pytest.fixture(scope="module")
def clip_vocab(tmp_path_factory):
    path = tmp_path_factory.mktemp("xm") / "c.txt"
    path.write_text("the river is bright and the garden is cold today\n", encoding="utf-8")
    return tk.build_vocab(path, tk.CLIP, 150)


def _random_seq(rng, v, n):
    body = [int(i) for i in rng.integers(len(v.special_ids), len(v), size=n)]
    ids = [v.start_id] + body + [v.end_id]
    return tk.TokenSequence(ids, [1] * len(ids), tk.CLIP)


MODES = {"adapt": ADAPT_BLOCKS, "finetune_single": 2, "finetune_pair": 4}


def test_chunking_properties_over_1000_random_sequences(clip_vocab):
    v = clip_vocab
    rng = np.random.default_rng(77)
    for trial in range(1000):
        mode = ("adapt", "finetune_single", "finetune_pair")[trial % 3]
        n_blocks = MODES[mode]
        capacity = n_blocks * BLOCK_LEN

        if mode == "finetune_pair":
            # Two sentences, each truncated against its own 2-block budget.
            budget = 2 * BLOCK_LEN
            s1 = _random_seq(rng, v, int(rng.integers(1, budget + 30)))
            s2 = _random_seq(rng, v, int(rng.integers(1, budget + 30)))
            seq = tk.TokenSequence(s1.ids + s2.ids, [1] * (len(s1) + len(s2)), tk.CLIP)
            chunked = chunk_for_clip(seq, mode, v)
            for part, half in ((s1, chunked.blocks[:2]), (s2, chunked.blocks[2:])):
                content = [i for b in half for i, m in zip(b.ids, b.attention_mask) if m]
                if len(part) <= budget:
                    assert content == part.ids
                else:
                    assert len(content) == budget and content[-1] == v.end_id
                    assert content[: budget - 1] == part.ids[: budget - 1]
            assert chunked.truncated == (len(s1) > budget or len(s2) > budget)
        else:
            n = int(rng.integers(1, capacity + 60))
            seq = _random_seq(rng, v, n)
            chunked = chunk_for_clip(seq, mode, v)
            content = [i for i, m in zip(chunked.flat_ids(), chunked.flat_mask()) if m]
            if len(seq) <= capacity:
                # round-trip identity: content is exactly the input sequence
                assert not chunked.truncated
                assert content == seq.ids
            else:
                assert chunked.truncated
                assert len(content) == capacity
                assert content[-1] == v.end_id
                assert content[: capacity - 1] == seq.ids[: capacity - 1]

        assert len(chunked.blocks) == n_blocks
        assert all(len(b) == BLOCK_LEN for b in chunked.blocks)
        assert len(chunked.flat_ids()) == capacity
        # pad positions hold the pad id
        assert all(
            i == v.pad_id for i, m in zip(chunked.flat_ids(), chunked.flat_mask()) if not m
        )


def test_pair_chunking_keeps_sentences_in_disjoint_blocks(clip_vocab):
    v = clip_vocab
    rng = np.random.default_rng(5)
    for _ in range(200):
        n1 = int(rng.integers(1, 2 * BLOCK_LEN + 20))
        n2 = int(rng.integers(1, 2 * BLOCK_LEN + 20))
        s1 = _random_seq(rng, v, n1)
        s2 = _random_seq(rng, v, n2)
        combined = tk.TokenSequence(s1.ids + s2.ids, [1] * (len(s1) + len(s2)), tk.CLIP)
        chunked = chunk_for_clip(combined, "finetune_pair", v)
        assert len(chunked.blocks) == 4
        first = [i for b in chunked.blocks[:2] for i, m in zip(b.ids, b.attention_mask) if m]
        second = [i for b in chunked.blocks[2:] for i, m in zip(b.ids, b.attention_mask) if m]
        cap = 2 * BLOCK_LEN
        if n1 + 2 <= cap:
            assert first == s1.ids
        else:
            assert first[-1] == v.end_id and len(first) == cap
        if n2 + 2 <= cap:
            assert second == s2.ids
        else:
            assert second[-1] == v.end_id and len(second) == cap


def test_chunking_rejects_unknown_mode(clip_vocab):
    with pytest.raises(ValueError):
        chunk_for_clip(_random_seq(np.random.default_rng(0), clip_vocab, 5), "nope", clip_vocab)


def test_cross_parameter_count_matches_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(8):
        heads = int(rng.integers(1, 4))
        xc = CrossModalConfig(
            lang_dim=heads * int(rng.integers(2, 6)),
            clip_dim=heads * int(rng.integers(2, 6)),
            n_heads=heads,
            lang_ffn_dim=int(rng.integers(4, 32)),
            clip_ffn_dim=int(rng.integers(4, 32)),
            n_cross_layers=int(rng.integers(1, 4)),
            shared_dim=heads * int(rng.choice([0, 2, 4])),
        )
        weights = init_cross_weights(xc, np.random.default_rng(1))
        assert cross_parameter_count(xc) == sum(t.size for t in weights.values())


def test_shared_dim_defaults_to_lang_dim():
    xc = CrossModalConfig(8, 6, 2, 16, 12, 1)
    assert xc.shared_dim == 8


@pytest.fixture(scope="module")
def toy_model(clip_vocab, tmp_path_factory):
    path = tmp_path_factory.mktemp("xm2") / "l.txt"
    path.write_text("the river is bright and the garden is cold today\n", encoding="utf-8")
    lv = tk.build_vocab(path, tk.LANGUAGE, 150)
    cv = clip_vocab
    lang_cfg = EncoderConfig(8, 1, 2, 16, len(lv), 32, type_vocab_size=2)
    clip_cfg = EncoderConfig(6, 1, 2, 12, len(cv), BLOCK_LEN)
    xc = CrossModalConfig(8, 6, 2, 16, 12, 1)
    rng = np.random.default_rng(4)
    weights = {}
    weights.update(init_encoder_weights(lang_cfg, rng, prefix="lang."))
    weights.update(init_encoder_weights(clip_cfg, rng, prefix="clip."))
    weights.update(init_cross_weights(xc, rng, prefix="cross."))
    return lang_cfg, clip_cfg, xc, weights, lv, cv


def _batch(lv, cv, text="the river is bright"):
    lang_seq = tk.encode(lv, text)
    return CrossModalBatch(
        language=lang_seq,
        clip=chunk_for_clip(tk.encode(cv, text), "finetune_single", cv),
        segment_ids=tk.segment_ids(lv, lang_seq),
    )


def test_cross_forward_shapes_and_probs(toy_model):
    lang_cfg, clip_cfg, xc, weights, lv, cv = toy_model
    batch = _batch(lv, cv)
    with no_grad():
        lang_h, clip_h, maps = cross_forward(lang_cfg, clip_cfg, xc, weights, batch)
    assert lang_h.shape == (len(batch.language), 8)
    assert clip_h.shape == (2 * BLOCK_LEN, 6)
    n_content = sum(batch.clip.flat_mask())
    for probs in maps.lang_to_clip[0]:
        rows = probs.sum(axis=-1)
        assert np.allclose(rows, 1.0, atol=1e-12)
        # pad keys get zero probability
        assert np.allclose(probs[:, n_content:], 0.0, atol=1e-12)


def test_disabled_cross_equals_zeroed_projection(toy_model):
    lang_cfg, clip_cfg, xc, weights, lv, cv = toy_model
    batch = _batch(lv, cv)
    zeroed = dict(weights)
    for name, t in weights.items():
        if ".cross.wo" in name or ".cross.wo_b" in name:
            zeroed[name] = Tensor(np.zeros(t.shape), name=name)
    with no_grad():
        h_dis, _, _ = cross_forward(lang_cfg, clip_cfg, xc, weights, batch, disable_cross=True)
        h_zero, _, _ = cross_forward(lang_cfg, clip_cfg, xc, zeroed, batch)
    assert np.array_equal(h_dis.data, h_zero.data)


def test_cross_attention_actually_mixes_streams(toy_model):
    lang_cfg, clip_cfg, xc, weights, lv, cv = toy_model
    b1 = _batch(lv, cv, "the river is bright")
    lang_seq = b1.language
    b2 = CrossModalBatch(
        language=lang_seq,
        clip=chunk_for_clip(tk.encode(cv, "the garden is cold today"), "finetune_single", cv),
        segment_ids=b1.segment_ids,
    )
    with no_grad():
        h1, _, _ = cross_forward(lang_cfg, clip_cfg, xc, weights, b1)
        h2, _, _ = cross_forward(lang_cfg, clip_cfg, xc, weights, b2)
        d1, _, _ = cross_forward(lang_cfg, clip_cfg, xc, weights, b1, disable_cross=True)
        d2, _, _ = cross_forward(lang_cfg, clip_cfg, xc, weights, b2, disable_cross=True)
    assert not np.allclose(h1.data, h2.data)  # clip side reaches the language stream
    assert np.allclose(d1.data, d2.data, atol=1e-12)  # but not when disabled


def test_attention_entropy_bounds(toy_model):
    lang_cfg, clip_cfg, xc, weights, lv, cv = toy_model
    batch = _batch(lv, cv)
    with no_grad():
        _, _, maps = cross_forward(lang_cfg, clip_cfg, xc, weights, batch)
    ent = attention_entropy(
        maps,
        np.asarray(batch.language.attention_mask),
        np.asarray(batch.clip.flat_mask()),
    )
    n_clip_keys = sum(batch.clip.flat_mask())
    for h in ent["lang_to_clip"][0]:
        assert 0.0 <= h <= np.log(n_clip_keys) + 1e-12
    for h in ent["clip_to_lang"][0]:
        assert 0.0 <= h <= np.log(len(batch.language)) + 1e-12
