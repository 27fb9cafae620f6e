"""PWCCA similarity properties and grounded-ratio arithmetic."""

import numpy as np
import pytest

from xdistill.analysis import (
    ConditioningError,
    RepresentationSet,
    UndefinedRatioError,
    build_grounded_report,
    categorize_examples,
    grounded_ratio,
    grounded_ratio_from_counts,
    pwcca,
    pwcca_symmetric,
    summarize_categories,
)

DIM = 10
N = 80


def _rand(seed, n=N, dim=DIM):
    return RepresentationSet(np.random.default_rng(seed).normal(size=(n, dim)), f"r{seed}")


def test_self_similarity_is_one():
    x = _rand(0)
    assert pwcca(x, x) == pytest.approx(1.0, abs=1e-6)


def test_affine_invariance():
    rng = np.random.default_rng(1)
    x = _rand(2)
    a = rng.normal(size=(DIM, DIM)) + 3 * np.eye(DIM)  # well conditioned
    shifted = RepresentationSet(x.matrix @ a + rng.normal(size=DIM), "affine")
    assert pwcca(x, shifted) == pytest.approx(1.0, abs=1e-6)
    # Whitening makes the second argument's basis irrelevant.
    y = _rand(3)
    assert pwcca(x, y) == pytest.approx(pwcca(x, RepresentationSet(y.matrix @ a, "ya")), abs=1e-6)


def test_independent_random_floor_across_20_seeds():
    scores = [pwcca(_rand(2 * s), _rand(2 * s + 1)) for s in range(20)]
    assert max(scores) < 0.35


def test_noise_monotonicity():
    """Median similarity over 10 seeds decreases as noise grows."""
    scales = [0.0, 0.5, 1.0, 2.0, 4.0]
    medians = []
    for scale in scales:
        scores = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            base = rng.normal(size=(N, DIM))
            noisy = base + scale * rng.normal(size=(N, DIM))
            scores.append(pwcca(RepresentationSet(base, "b"), RepresentationSet(noisy, "n")))
        medians.append(np.median(scores))
    assert all(a > b for a, b in zip(medians, medians[1:]))
    assert medians[0] == pytest.approx(1.0, abs=1e-6)


def test_symmetric_wrapper():
    x, y = _rand(4), _rand(5)
    s = pwcca_symmetric(x, y)
    assert s["mean"] == pytest.approx((s["xy"] + s["yx"]) / 2)
    assert s["xy"] == pytest.approx(pwcca(x, y))


def test_rank_deficient_raises_conditioning_error():
    flat = np.zeros((N, DIM))
    flat[:, 0] = np.random.default_rng(0).normal(size=N)
    with pytest.raises(ConditioningError) as exc:
        pwcca(RepresentationSet(flat, "flat"), _rand(6))
    assert "rank" in str(exc.value)


def test_needs_more_rows_than_dims():
    with pytest.raises(ValueError):
        RepresentationSet(np.zeros((DIM, DIM)), "square")


def test_grounded_ratio_reference_values():
    """(grounded, non-grounded) -> ratio, at 4 decimals."""
    assert round(grounded_ratio_from_counts(11, 16), 4) == 0.4074
    assert round(grounded_ratio_from_counts(4, 10), 4) == 0.2857
    assert round(grounded_ratio_from_counts(13, 17), 4) == 0.4333
    # 6/(6+32): plain division, 0.1579 at 4 decimals.
    assert round(grounded_ratio_from_counts(6, 32), 4) == round(6 / 38, 4)
    assert round(grounded_ratio_from_counts(0, 7), 4) == 0.0


def test_grounded_ratio_zero_total():
    with pytest.raises(UndefinedRatioError):
        grounded_ratio_from_counts(0, 0)
    assert grounded_ratio(["grounded", "non-grounded", "stopword", "grounded"]) == pytest.approx(2 / 3)


def test_categorize_examples():
    # 4 examples x 3 seeds of 0/1 correctness
    a = np.array([[1, 1, 1], [0, 0, 0], [1, 0, 1], [1, 1, 0]])
    b = np.array([[0, 0, 0], [1, 1, 1], [1, 0, 1], [1, 0, 0]])
    cats = categorize_examples(a, b)
    assert 0 in cats["Improved"]
    assert 1 in cats["Worsened"]
    assert 2 in cats["OnPar"]
    assert 3 in cats["Improved"]


def test_summarize_categories_quartiles():
    data = {"Improved": [0.1, 0.2, 0.3, 0.4]}
    s = summarize_categories(data)["Improved"]
    # numpy linear-interpolation quartiles
    assert s["q1"] == pytest.approx(0.175)
    assert s["median"] == pytest.approx(0.25)
    assert s["q3"] == pytest.approx(0.325)
    assert s["mean"] == pytest.approx(0.25)
    with pytest.raises(ValueError):
        summarize_categories({"Improved": []})


def test_build_grounded_report():
    tokens = [["river", "the", "letter"], ["the", "the"], ["garden", "road"]]
    freq = {"river": 200, "letter": 5, "garden": 300, "road": 150}
    sw = {"the"}
    a = np.array([[1], [1], [0]])
    b = np.array([[0], [1], [1]])
    report = build_grounded_report(tokens, a, b, sw, freq, 100)
    by_index = {e["index"]: e for e in report.examples}
    assert by_index[0]["category"] == "Improved"
    assert by_index[0]["ratio"] == pytest.approx(0.5)
    assert by_index[1]["ratio"] is None  # all stopwords
    assert by_index[2]["category"] == "Worsened"
    assert by_index[2]["ratio"] == pytest.approx(1.0)
