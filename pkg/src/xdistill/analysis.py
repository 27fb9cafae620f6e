"""Representation similarity (projection-weighted CCA), visually-grounded
ratio statistics, and report assembly."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import sym_eig
from .tokenizers import classify_grounded

EIG_CLIP = 1e-10  # relative eigenvalue floor when whitening


class ConditioningError(ValueError):
    pass


@dataclass
class RepresentationSet:
    matrix: np.ndarray  # (n_samples, dim)
    tag: str = ""

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        n, d = self.matrix.shape
        if n <= d:
            raise ConditioningError(f"{self.tag or 'representation set'}: need n_samples > dim, got {n} x {d}")


def _whitener(cov: np.ndarray, tag: str) -> np.ndarray:
    w, q = sym_eig(cov)
    keep = w > EIG_CLIP * w[0]
    rank = int(keep.sum())
    if rank < cov.shape[0]:
        raise ConditioningError(f"{tag}: rank-deficient after eigenvalue clipping (effective rank {rank} of {cov.shape[0]})")
    return q[:, keep] / np.sqrt(w[keep])


def pwcca(x: RepresentationSet, y: RepresentationSet) -> float:
    """Projection-weighted canonical correlation between two sets.

    Canonical correlations are weighted by how much of x's (centered) data
    each canonical direction accounts for, so the score is directional:
    pwcca(x, y) need not equal pwcca(y, x).
    """
    xm = x.matrix
    ym = y.matrix
    if xm.shape[0] != ym.shape[0]:
        raise ValueError(f"sample counts differ: {xm.shape[0]} vs {ym.shape[0]}")
    xc = xm - xm.mean(axis=0)
    yc = ym - ym.mean(axis=0)
    n = xc.shape[0]

    wx = _whitener(xc.T @ xc / n, x.tag or "x")
    wy = _whitener(yc.T @ yc / n, y.tag or "y")
    xw = xc @ wx
    yw = yc @ wy
    m = xw.T @ yw / n

    # Singular structure of m via the symmetric eigenproblem of m m^T.
    evals, u = sym_eig(m @ m.T)
    rho = np.sqrt(np.clip(evals, 0.0, 1.0))

    # Canonical variates on the x side, one column per direction.
    variates = xw @ u
    # Projection weights: how much of x's raw columns each variate explains.
    alpha = np.abs(variates.T @ xc).sum(axis=1)
    if alpha.sum() == 0:
        raise ConditioningError("zero projection weights (degenerate x)")
    alpha = alpha / alpha.sum()
    return float(np.sum(alpha * rho))


def pwcca_symmetric(x: RepresentationSet, y: RepresentationSet) -> dict[str, float]:
    """Both directional scores and their mean, for reporting."""
    xy = pwcca(x, y)
    yx = pwcca(y, x)
    return {"xy": xy, "yx": yx, "mean": (xy + yx) / 2.0}


# ---------------------------------------------------------- grounded ratios


class UndefinedRatioError(ValueError):
    pass


def grounded_counts(tokens: list[str], stopwords: set[str], freq: dict[str, int], threshold: int = 100):
    counts = {"grounded": 0, "non-grounded": 0, "stopword": 0}
    for tok in tokens:
        counts[classify_grounded(tok, stopwords, freq, threshold)] += 1
    return counts


def grounded_ratio_from_counts(grounded: int, non_grounded: int) -> float:
    """grounded / (grounded + non-grounded); stopwords never enter."""
    if grounded == 0 and non_grounded == 0:
        raise UndefinedRatioError("all tokens are stopwords; ratio undefined")
    if grounded == 0:
        return 0.0
    return grounded / (grounded + non_grounded)


def grounded_ratio(classified: list[str]) -> float:
    g = classified.count("grounded")
    n = classified.count("non-grounded")
    return grounded_ratio_from_counts(g, n)


def categorize_examples(correct_a: np.ndarray, correct_b: np.ndarray) -> dict[str, list[int]]:
    """Partition example indices by per-seed correct-run counts.

    `correct_a` / `correct_b` are (n_examples, n_seeds) 0/1 arrays for the
    adapted and baseline models; more correct runs for A puts the example
    in Improved, fewer in Worsened, ties in OnPar.
    """
    a = np.asarray(correct_a)
    b = np.asarray(correct_b)
    if a.shape != b.shape:
        raise ValueError(f"correctness arrays differ in shape: {a.shape} vs {b.shape}")
    score_a = a.sum(axis=1)
    score_b = b.sum(axis=1)
    out: dict[str, list[int]] = {"Improved": [], "OnPar": [], "Worsened": []}
    for i, (sa, sb) in enumerate(zip(score_a, score_b)):
        if sa > sb:
            out["Improved"].append(i)
        elif sa < sb:
            out["Worsened"].append(i)
        else:
            out["OnPar"].append(i)
    return out


def summarize_categories(ratios_by_category: dict[str, list[float]]) -> dict[str, dict[str, float]]:
    """Quartiles (linear interpolation), median, and mean per category."""
    summary = {}
    for cat, ratios in ratios_by_category.items():
        if not ratios:
            raise ValueError(f"category {cat!r} is empty")
        arr = np.asarray(ratios, dtype=np.float64)
        summary[cat] = {
            "q1": float(np.percentile(arr, 25)),
            "median": float(np.percentile(arr, 50)),
            "q3": float(np.percentile(arr, 75)),
            "mean": float(arr.mean()),
        }
    return summary


@dataclass
class GroundedReport:
    examples: list[dict] = field(default_factory=list)  # token counts + ratio + category
    categories: dict[str, dict[str, float]] = field(default_factory=dict)

    def to_json(self, path: str | Path, config_hash: str = ""):
        payload = {"config_hash": config_hash, "examples": self.examples, "categories": self.categories}
        Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")

    def to_csv(self, path: str | Path, config_hash: str = ""):
        with Path(path).open("w", newline="", encoding="utf-8") as f:
            if config_hash:
                f.write(f"# config_hash={config_hash}\n")
            writer = csv.writer(f)
            writer.writerow(["category", "q1", "median", "q3", "mean", "n"])
            counts = {cat: 0 for cat in self.categories}
            for ex in self.examples:
                counts[ex["category"]] = counts.get(ex["category"], 0) + 1
            for cat, s in self.categories.items():
                writer.writerow([cat, f"{s['q1']:.6f}", f"{s['median']:.6f}", f"{s['q3']:.6f}", f"{s['mean']:.6f}", counts.get(cat, 0)])


def build_grounded_report(
    example_tokens: list[list[str]],
    correct_a: np.ndarray,
    correct_b: np.ndarray,
    stopwords: set[str],
    freq: dict[str, int],
    threshold: int = 100,
) -> GroundedReport:
    partitions = categorize_examples(correct_a, correct_b)
    category_of = {}
    for cat, idxs in partitions.items():
        for i in idxs:
            category_of[i] = cat
    report = GroundedReport()
    ratios: dict[str, list[float]] = {}
    for i, tokens in enumerate(example_tokens):
        counts = grounded_counts(tokens, stopwords, freq, threshold)
        try:
            ratio = grounded_ratio_from_counts(counts["grounded"], counts["non-grounded"])
        except UndefinedRatioError:
            ratio = None
        cat = category_of[i]
        report.examples.append(
            {
                "index": i,
                "category": cat,
                "grounded": counts["grounded"],
                "non_grounded": counts["non-grounded"],
                "stopwords": counts["stopword"],
                "ratio": ratio,
            }
        )
        if ratio is not None:
            ratios.setdefault(cat, []).append(ratio)
    report.categories = summarize_categories({c: r for c, r in ratios.items() if r})
    return report
