"""Encoder parameter counting, masking behavior, and shape checks."""

import json
from importlib import resources

import numpy as np
import pytest

from xdistill import tokenizers as tk
from xdistill.encoder import (
    BERT_BASE,
    BERT_LARGE,
    CLIP_TEXT,
    EncoderConfig,
    LengthError,
    count_parameters,
    encode_stream,
    init_encoder_weights,
    pooled_output,
)


class _ShapeOnlyRng:
    """Stands in for a Generator so huge presets enumerate without allocating:
    broadcast views survive np.asarray(float64) uncopied."""

    def normal(self, loc, scale, size):
        return np.broadcast_to(np.float64(0.0), size)


def enumerated_count(cfg: EncoderConfig) -> int:
    return sum(t.size for t in init_encoder_weights(cfg, _ShapeOnlyRng()).values())


def test_bert_base_exact_count():
    assert count_parameters(BERT_BASE) == 109_482_240


def test_closed_form_matches_enumeration_for_presets():
    for cfg in (BERT_BASE, BERT_LARGE, CLIP_TEXT):
        assert count_parameters(cfg) == enumerated_count(cfg)


def test_closed_form_matches_enumeration_for_toy_configs():
    rng = np.random.default_rng(0)
    for _ in range(10):
        heads = int(rng.integers(1, 4))
        cfg = EncoderConfig(
            hidden_dim=heads * int(rng.integers(2, 8)),
            n_layers=int(rng.integers(1, 4)),
            n_heads=heads,
            ffn_dim=int(rng.integers(4, 40)),
            vocab_size=int(rng.integers(10, 500)),
            max_len=int(rng.integers(8, 128)),
            type_vocab_size=int(rng.choice([0, 2])),
            has_pooler=bool(rng.integers(0, 2)),
        )
        assert count_parameters(cfg) == enumerated_count(cfg)


def test_presets_match_bundled_json():
    for name, cfg in (("bert-base", BERT_BASE), ("bert-large", BERT_LARGE), ("clip", CLIP_TEXT)):
        bundled = json.loads((resources.files("xdistill") / "data" / "presets" / f"{name}.json").read_text())
        assert EncoderConfig(**bundled) == cfg


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(10, 1, 3, 8, 50, 16)  # 10 not divisible by 3


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    path = tmp_path_factory.mktemp("enc") / "c.txt"
    path.write_text("the river is bright\nthe garden is cold\n", encoding="utf-8")
    v = tk.build_vocab(path, tk.LANGUAGE, 120)
    cfg = EncoderConfig(8, 2, 2, 16, len(v), 16, type_vocab_size=2, has_pooler=True)
    weights = init_encoder_weights(cfg, np.random.default_rng(0))
    return cfg, weights, v


def test_encode_stream_shape(toy):
    cfg, weights, v = toy
    seq = tk.encode(v, "the river is bright")
    h = encode_stream(cfg, weights, seq, tk.segment_ids(v, seq))
    assert h.shape == (len(seq), cfg.hidden_dim)
    assert np.all(np.isfinite(h.data))


def test_padding_does_not_change_content_rows(toy):
    cfg, weights, v = toy
    seq = tk.encode(v, "the river is bright")
    h1 = encode_stream(cfg, weights, seq, tk.segment_ids(v, seq))
    padded = seq.padded_to(12, v.pad_id)
    h2 = encode_stream(cfg, weights, padded, tk.segment_ids(v, padded))
    assert np.allclose(h1.data, h2.data[: len(seq)], atol=1e-12)


def test_length_over_max_rejected(toy):
    cfg, weights, v = toy
    long_seq = tk.TokenSequence([v.cls_id] * (cfg.max_len + 1), [1] * (cfg.max_len + 1), tk.LANGUAGE)
    with pytest.raises(LengthError):
        encode_stream(cfg, weights, long_seq)


def test_pooled_output_shape(toy):
    cfg, weights, v = toy
    seq = tk.encode(v, "the river")
    h = encode_stream(cfg, weights, seq, tk.segment_ids(v, seq))
    p = pooled_output(cfg, weights, h)
    assert p.shape == (1, cfg.hidden_dim)
    assert np.all(np.abs(p.data) <= 1.0)  # tanh squashed
