"""Masking statistics, adaptation batch construction, loss baselines, and
the contrastive warm-up."""

import numpy as np
import pytest

from xdistill import tokenizers as tk
from xdistill.adapt import (
    IGNORE,
    AdaptConfig,
    ContrastiveConfig,
    MaskingSpec,
    NumericError,
    adapt_losses,
    clip_start_embeddings,
    make_adapt_batch,
    mask_language_tokens,
    run_adaptation,
    toy_contrastive_pretrain,
    write_history_csv,
)
from xdistill.crossmodal import CrossModalConfig
from xdistill.encoder import EncoderConfig
from xdistill.model import CrossModalModel
from xdistill.numerics import Tensor


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    path = tmp_path_factory.mktemp("adapt") / "c.txt"
    rng = np.random.default_rng(2)
    words = ["river", "window", "garden", "road", "music", "house", "bright", "cold", "open", "walks"]
    docs = []
    for _ in range(6):
        doc = [" ".join(rng.choice(words, size=6)) for _ in range(5)]
        docs.append("\n".join(doc))
    path.write_text("\n\n".join(docs) + "\n", encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def model(corpus):
    lv = tk.build_vocab(corpus, tk.LANGUAGE, 200)
    cv = tk.build_vocab(corpus, tk.CLIP, 200)
    lang = EncoderConfig(8, 1, 2, 16, len(lv), 64, type_vocab_size=2)
    clip = EncoderConfig(6, 1, 2, 12, len(cv), 77)
    xc = CrossModalConfig(8, 6, 2, 16, 12, 1)
    return CrossModalModel(lang, clip, xc, lv, cv, seed=0)


def test_masking_spec_must_sum_to_one():
    with pytest.raises(ValueError):
        MaskingSpec(mask_prob=0.8, random_prob=0.3, keep_prob=0.1)


def test_masking_statistics_over_10k_samples(model):
    """Selected 0.15 +- 0.01; mask/random/keep 0.8/0.1/0.1 +- 0.02."""
    lv = model.lang_vocab
    spec = MaskingSpec()
    rng = np.random.default_rng(123)
    base = tk.encode(lv, "river window garden road music house bright cold open walks")
    eligible = sum(1 for t in base.ids if t not in lv.special_ids)

    n_rounds = 10_000 // eligible + 1
    selected = masked = randomized = kept = 0
    for _ in range(n_rounds * 10):
        corrupted, labels = mask_language_tokens(base, lv, spec, rng)
        for i, lab in enumerate(labels):
            if lab == IGNORE:
                continue
            selected += 1
            if corrupted.ids[i] == lv.mask_id:
                masked += 1
            elif corrupted.ids[i] == lab:
                kept += 1
            else:
                randomized += 1
    total = n_rounds * 10 * eligible
    assert total >= 10_000
    assert abs(selected / total - 0.15) < 0.01
    assert abs(masked / selected - 0.8) < 0.02
    # A "random" replacement can coincide with the original token, which
    # counts as kept here; allow for that |V|^-1 leakage inside the 0.02.
    assert abs(randomized / selected - 0.1) < 0.02
    assert abs(kept / selected - 0.1) < 0.02


def test_match_negative_rate(model, corpus):
    docs = tk.read_corpus(corpus)
    rng = np.random.default_rng(7)
    spec = MaskingSpec()
    labels = [
        make_adapt_batch(docs, model.lang_vocab, model.clip_vocab, spec, rng, lang_max_len=48).match_label
        for _ in range(10_000)
    ]
    assert abs(np.mean(labels) - 0.5) < 0.015


def test_adapt_batch_invariants(model, corpus):
    docs = tk.read_corpus(corpus)
    rng = np.random.default_rng(0)
    spec = MaskingSpec()
    for _ in range(50):
        b = make_adapt_batch(docs, model.lang_vocab, model.clip_vocab, spec, rng, lang_max_len=48)
        assert b.clip.n_blocks == 9
        # the clip side is never masked
        assert model.clip_vocab.ids.get("[MASK]") is None
        flat = b.clip.flat_ids()
        assert all(flat[i] == lab for i, lab in zip(b.cliptc_positions, b.cliptc_labels))
        mask = b.clip.flat_mask()
        assert all(mask[i] == 1 for i in b.cliptc_positions)
        if b.match_label == 1:
            assert b.text[0] == b.text[1]
        else:
            assert b.text[0] != b.text[1]


def test_initial_losses_near_uniform_baselines(model, corpus):
    """At init, mlm and cliptc sit near ln |V| and match near ln 2."""
    docs = tk.read_corpus(corpus)
    rng = np.random.default_rng(1)
    spec = MaskingSpec()
    records = []
    for _ in range(12):
        b = make_adapt_batch(docs, model.lang_vocab, model.clip_vocab, spec, rng, lang_max_len=48)
        _, rec = adapt_losses(model, b, ("mlm", "match", "cliptc"))
        records.append(rec)
    mlm = np.mean([r.mlm for r in records if r.mlm > 0])
    match = np.mean([r.match for r in records])
    cliptc = np.mean([r.cliptc for r in records if r.cliptc > 0])
    assert abs(mlm - np.log(len(model.lang_vocab))) < 0.2 * np.log(len(model.lang_vocab))
    assert abs(match - np.log(2)) < 0.2 * np.log(2)
    assert abs(cliptc - np.log(len(model.clip_vocab))) < 0.2 * np.log(len(model.clip_vocab))


def test_disabled_objective_contributes_zero(model, corpus):
    docs = tk.read_corpus(corpus)
    b = make_adapt_batch(docs, model.lang_vocab, model.clip_vocab, MaskingSpec(), np.random.default_rng(2), lang_max_len=48)
    total, rec = adapt_losses(model, b, ("match",))
    assert rec.mlm == 0.0 and rec.cliptc == 0.0
    assert total.item() == pytest.approx(rec.match)


def test_adapt_config_validation():
    with pytest.raises(ValueError):
        AdaptConfig(objectives=())
    with pytest.raises(ValueError):
        AdaptConfig(objectives=("mlm", "bogus"))


def test_nan_loss_raises_numeric_error_with_step(model, corpus):
    docs = tk.read_corpus(corpus)
    poisoned = CrossModalModel(model.lang_cfg, model.clip_cfg, model.cross_cfg, model.lang_vocab, model.clip_vocab, seed=0)
    poisoned.params["head.match.w"] = Tensor(
        np.full(poisoned.params["head.match.w"].shape, np.nan), requires_grad=True, name="head.match.w"
    )
    cfg = AdaptConfig(epochs=1, batch_size=4, objectives=("match",), lang_max_len=48, seed=0)
    with pytest.raises(NumericError) as exc:
        run_adaptation(poisoned, docs, cfg)
    assert exc.value.step == 0


def test_write_history_csv_format(tmp_path):
    rows = [{"step": 1, "total": 1.5}, {"step": 2, "total": 1.25}]
    out = tmp_path / "h.csv"
    write_history_csv(rows, out, "abcd1234")
    text = out.read_text()
    assert text.startswith("# config_hash=abcd1234\nstep,total\n")
    assert "1.25" in text


def test_contrastive_pretrain_improves_pair_similarity(model):
    rng = np.random.default_rng(3)
    sentences = ["river walks", "garden cold", "music open", "bright house"]
    targets = rng.normal(size=(4, model.clip_cfg.hidden_dim))
    targets /= np.linalg.norm(targets, axis=1, keepdims=True)
    pairs = list(zip(sentences, targets))

    fresh = CrossModalModel(model.lang_cfg, model.clip_cfg, model.cross_cfg, model.lang_vocab, model.clip_vocab, seed=5)
    history = toy_contrastive_pretrain(fresh, pairs, ContrastiveConfig(steps=120, lr=0.01, seed=0))
    assert history[-1]["loss"] < history[0]["loss"]

    h = clip_start_embeddings(fresh, sentences)
    assert np.allclose(np.linalg.norm(h, axis=1), 1.0, atol=1e-10)
    sims = h @ targets.T
    gap = np.mean(np.diag(sims)) - (sims.sum() - np.trace(sims)) / (len(sentences) * (len(sentences) - 1))
    assert gap > 0.3


def test_contrastive_needs_two_pairs(model):
    with pytest.raises(ValueError):
        toy_contrastive_pretrain(model, [("one", np.ones(model.clip_cfg.hidden_dim))], ContrastiveConfig())
