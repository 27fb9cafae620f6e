"""Task loading, metric identities, and the finetuning harness."""

import numpy as np
import pytest

from xdistill import tokenizers as tk
from xdistill.encoder import EncoderConfig, init_encoder_weights
from xdistill.finetune import (
    LabeledExample,
    SchemaError,
    TaskSpec,
    compute_metric,
    finetune_encoder,
    load_task,
    matthews_corr,
    median_of_runs,
    save_task,
)


def test_task_spec_validation():
    with pytest.raises(ValueError):
        TaskSpec("t", arity="triple")
    with pytest.raises(ValueError):
        TaskSpec("t", metric="bleu")


def test_load_task_round_trip(tmp_path):
    spec = TaskSpec("toy", arity="pair")
    examples = [
        LabeledExample("a b c", "d e", 1),
        LabeledExample("f g", "h", 0),
    ]
    path = tmp_path / "t.tsv"
    save_task(examples, spec, path)
    again = load_task(path, spec)
    assert again == examples


def test_load_task_missing_column(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("sentence1\tlabel\nfoo\t1\n", encoding="utf-8")
    with pytest.raises(SchemaError) as exc:
        load_task(path, TaskSpec("t", arity="pair"))
    assert "sentence2" in str(exc.value)


def test_load_task_bad_rows_collected(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("sentence1\tlabel\nok\t1\nbad\tx\n\t0\n", encoding="utf-8")
    with pytest.raises(SchemaError) as exc:
        load_task(path, TaskSpec("t"))
    msg = str(exc.value)
    assert "line 3" in msg and "line 4" in msg


def test_accuracy_and_f1():
    preds = np.array([1, 0, 1, 1.0])
    labels = np.array([1, 0, 0, 1.0])
    assert compute_metric(preds, labels, "accuracy") == pytest.approx(0.75)
    # precision 2/3, recall 1 -> F1 = 0.8
    assert compute_metric(preds, labels, "f1") == pytest.approx(0.8)


def test_matthews_known_value_and_degenerate():
    preds = np.array([1, 1, 0, 0.0])
    labels = np.array([1, 0, 1, 0.0])
    value, degenerate = matthews_corr(preds, labels)
    assert value == pytest.approx(0.0) and not degenerate
    value, degenerate = matthews_corr(np.ones(4), np.array([1, 0, 1, 0.0]))
    assert value == 0.0 and degenerate


def test_correlation_average_against_scipy():
    from scipy import stats

    rng = np.random.default_rng(0)
    labels = rng.normal(size=40)
    preds = labels + 0.3 * rng.normal(size=40)
    expected = (stats.pearsonr(preds, labels)[0] + stats.spearmanr(preds, labels)[0]) / 2
    assert compute_metric(preds, labels, "pearson_spearman") == pytest.approx(expected)


def test_rmse():
    assert compute_metric(np.array([1.0, 2.0]), np.array([1.0, 4.0]), "rmse") == pytest.approx(np.sqrt(2.0))


def test_median_of_runs():
    result = median_of_runs(lambda seed: float(seed), [3, 1, 2])
    assert result["median"] == 2.0
    assert result["raw_scores"] == [3.0, 1.0, 2.0]
    with pytest.raises(ValueError):
        median_of_runs(lambda s: 0.0, [])


def _separable_task(rng, n):
    pos = ["bright", "calm", "fresh"]
    neg = ["dark", "broken", "dull"]
    subj = ["the river", "a window", "the garden", "this road"]
    out = []
    for i in range(n):
        label = i % 2
        word = (pos if label else neg)[int(rng.integers(3))]
        out.append(LabeledExample(f"{subj[int(rng.integers(4))]} is {word}", None, label))
    return out


def test_finetune_learns_separable_task(tmp_path):
    rng = np.random.default_rng(6)
    train = _separable_task(rng, 120)
    dev = _separable_task(rng, 40)
    corpus = tmp_path / "c.txt"
    corpus.write_text("\n".join(e.sentence1 for e in train) + "\n", encoding="utf-8")
    vocab = tk.build_vocab(corpus, tk.LANGUAGE, 200)
    cfg = EncoderConfig(16, 1, 2, 32, len(vocab), 32, type_vocab_size=2)
    weights = init_encoder_weights(cfg, np.random.default_rng(0))
    spec = TaskSpec("sep", lr=0.01, epochs=3, batch_size=4)
    _, history = finetune_encoder(cfg, weights, vocab, train, dev, spec, seed=0)
    assert history[-1]["dev_metric"] > 0.9
    assert len(history) == 3
