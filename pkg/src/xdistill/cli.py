"""Command-line front end: one subcommand per pipeline phase.

    xdistill <phase> --config <path> [--seed N] [--objectives a,b,c]
             [--epochs N] [--out DIR]

Every phase validates its JSON config up front (exit 2 on problems),
embeds the config hash in each artifact it writes, and records a run
manifest.  A non-finite loss aborts with exit 3 and the failing step.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, tokenizers as tk
from .adapt import (
    AdaptConfig,
    ContrastiveConfig,
    NumericError,
    clip_start_embeddings,
    run_adaptation,
    toy_contrastive_pretrain,
    write_history_csv,
)
from .analysis import RepresentationSet, build_grounded_report, pwcca_symmetric
from .checkpoint import config_hash, load_checkpoint, load_into, save_checkpoint
from .crossmodal import (
    CrossModalBatch,
    CrossModalConfig,
    attention_entropy,
    chunk_for_clip,
    cross_forward,
    export_attention_maps,
)
from .encoder import EncoderConfig, count_parameters
from .finetune import TaskSpec, finetune_encoder, finetune_full_model, load_task, median_of_runs
from .gradsuite import run_gradient_suite
from .model import CrossModalModel, extract_language_encoder
from .plots import (
    plot_attention_heatmap,
    plot_grounded_boxes,
    plot_loss_history,
    plot_metric_history,
    plot_pwcca_bars,
)

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(ValueError):
    pass


def _load_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    try:
        cfg = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{p}: top level must be an object")
    return cfg


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise ConfigError(f"config is missing required key {key!r}")
    return cfg[key]


def _existing_path(cfg: dict, key: str) -> Path:
    p = Path(_require(cfg, key))
    if not p.exists():
        raise ConfigError(f"config key {key!r}: path {p} does not exist")
    return p


def _out_dir(cfg: dict, args) -> Path:
    out = Path(args.out or cfg.get("out", "runs/out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, phase: str, cfg: dict, seed: int, artifacts: list[str]):
    manifest = {
        "phase": phase,
        "version": f"xdistill-{__version__}",
        "seed": seed,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "artifacts": artifacts,
    }
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _encoder_cfg(section: dict, vocab_size: int | None = None) -> EncoderConfig:
    fields = dict(section)
    if vocab_size is not None:
        fields["vocab_size"] = vocab_size
    try:
        return EncoderConfig(**fields)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad encoder config: {exc}") from exc


def _build_model(cfg: dict, seed: int, out: Path | None = None) -> CrossModalModel:
    corpus = _existing_path(cfg, "corpus")
    lv = tk.build_vocab(corpus, tk.LANGUAGE, cfg.get("lang_vocab_size", 400))
    cv = tk.build_vocab(corpus, tk.CLIP, cfg.get("clip_vocab_size", 400))
    lang_cfg = _encoder_cfg(_require(cfg, "language_encoder"), len(lv))
    clip_cfg = _encoder_cfg(_require(cfg, "clip_encoder"), len(cv))
    xsec = cfg.get("crossmodal", {})
    xc = CrossModalConfig(
        lang_dim=lang_cfg.hidden_dim,
        clip_dim=clip_cfg.hidden_dim,
        n_heads=xsec.get("n_heads", lang_cfg.n_heads),
        lang_ffn_dim=xsec.get("lang_ffn_dim", lang_cfg.ffn_dim),
        clip_ffn_dim=xsec.get("clip_ffn_dim", clip_cfg.ffn_dim),
        n_cross_layers=xsec.get("n_cross_layers", 2),
        shared_dim=xsec.get("shared_dim", 0),
    )
    if out is not None:
        lv.save(out / "lang_vocab.txt")
        cv.save(out / "clip_vocab.txt")
    return CrossModalModel(lang_cfg, clip_cfg, xc, lv, cv, seed=seed)


def _model_config_snapshot(model: CrossModalModel) -> dict:
    return {
        "language_encoder": dataclasses.asdict(model.lang_cfg),
        "clip_encoder": dataclasses.asdict(model.clip_cfg),
        "crossmodal": dataclasses.asdict(model.cross_cfg),
    }


# ------------------------------------------------------------------ phases


def cmd_count_params(args) -> int:
    cfg = _load_config(args.config)
    print(count_parameters(_encoder_cfg(cfg)))
    return 0


def cmd_gradcheck(args) -> int:
    errors = run_gradient_suite(seed=args.seed or 0, report=lambda k, e: print(f"{k:28s} {e:.3e}"))
    worst = max(errors.values())
    print(f"max relative error: {worst:.3e}")
    return 0 if worst < 1e-4 else 1


def cmd_adapt(args) -> int:
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    out = _out_dir(cfg, args)
    model = _build_model(cfg, seed, out)
    objectives = tuple((args.objectives or ",".join(cfg.get("objectives", ["mlm", "match", "cliptc"]))).split(","))
    run_cfg = AdaptConfig(
        epochs=args.epochs or cfg.get("epochs", 1),
        batch_size=cfg.get("batch_size", 8),
        lr=cfg.get("lr", 1e-4),
        warmup_ratio=cfg.get("warmup_ratio", 0.05),
        objectives=objectives,
        lang_max_len=cfg.get("lang_max_len", 0),
        seed=seed,
    )
    docs = tk.read_corpus(_existing_path(cfg, "corpus"))
    history = run_adaptation(model, docs, run_cfg)
    chash = config_hash(cfg)
    write_history_csv(history, out / "loss.csv", chash)
    plot_loss_history(history, out / "loss.png")
    snapshot = _model_config_snapshot(model)
    save_checkpoint(out / "adapt.xdcm", model.params, snapshot, seed, "adapt")
    _write_manifest(out, "adapt", cfg, seed, ["adapt.xdcm", "loss.csv", "loss.png", "lang_vocab.txt", "clip_vocab.txt"])
    print(f"adaptation finished: {len(history)} steps, final loss {history[-1]['total']:.4f}")
    return 0


def cmd_pretrain_toy(args) -> int:
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    out = _out_dir(cfg, args)
    model = _build_model(cfg, seed, out)
    rng = np.random.default_rng(seed)
    sentences = tk.sentences_of(tk.read_corpus(_existing_path(cfg, "corpus")))
    n_pairs = cfg.get("n_pairs", 16)
    if n_pairs > len(sentences):
        raise ConfigError(f"n_pairs {n_pairs} exceeds corpus size {len(sentences)}")
    chosen = sentences[:n_pairs]
    targets = rng.normal(size=(n_pairs, model.clip_cfg.hidden_dim))
    targets /= np.linalg.norm(targets, axis=1, keepdims=True)
    ccfg = ContrastiveConfig(
        steps=cfg.get("steps", 300), lr=cfg.get("lr", 1e-3), temperature=cfg.get("temperature", 0.1), seed=seed
    )
    history = toy_contrastive_pretrain(model, list(zip(chosen, targets)), ccfg)
    h = clip_start_embeddings(model, chosen)
    sims = h @ targets.T
    gap = float(np.mean(np.diag(sims)) - (sims.sum() - np.trace(sims)) / (n_pairs * (n_pairs - 1)))
    chash = config_hash(cfg)
    write_history_csv(history, out / "contrastive_loss.csv", chash)
    plot_loss_history(history, out / "contrastive_loss.png", title="contrastive loss")
    save_checkpoint(out / "clip_pretrained.xdcm", model.subset("clip."), _model_config_snapshot(model), seed, "pretrain-toy")
    (out / "contrastive_summary.json").write_text(
        json.dumps({"config_hash": chash, "pair_cos_gap": gap, "n_pairs": n_pairs}, indent=2) + "\n", encoding="utf-8"
    )
    _write_manifest(out, "pretrain-toy", cfg, seed, ["clip_pretrained.xdcm", "contrastive_loss.csv", "contrastive_loss.png", "contrastive_summary.json"])
    print(f"contrastive pretraining done; in-pair vs cross-pair cosine gap = {gap:.4f}")
    return 0


def cmd_extract(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(cfg, args)
    ckpt_path = _existing_path(cfg, "checkpoint")
    header, tensors = load_checkpoint(ckpt_path)
    lang_tensors = {k[len("lang.") :]: v for k, v in tensors.items() if k.startswith("lang.")}
    if not lang_tensors:
        raise ConfigError(f"{ckpt_path}: checkpoint holds no language-encoder tensors")
    lang_cfg_dict = header["config"]["language_encoder"]
    expected = count_parameters(EncoderConfig(**lang_cfg_dict))
    actual = sum(v.size for v in lang_tensors.values())
    if actual != expected:
        raise ConfigError(f"extracted scalar count {actual} != closed-form count {expected}")
    from .numerics import Tensor

    params = {k: Tensor(v, requires_grad=True, name=k) for k, v in lang_tensors.items()}
    save_checkpoint(out / "xdbert.xdcm", params, {"language_encoder": lang_cfg_dict}, header["seed"], "extract")
    _write_manifest(out, "extract", cfg, header["seed"], ["xdbert.xdcm"])
    print(f"extracted language encoder: {actual} parameters")
    return 0


def _task_spec(cfg: dict) -> TaskSpec:
    try:
        return TaskSpec(**_require(cfg, "task"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad task spec: {exc}") from exc


def cmd_finetune(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(cfg, args)
    spec = _task_spec(cfg)
    vocab = tk.Vocab.load(_existing_path(cfg, "lang_vocab"), tk.LANGUAGE)
    lang_cfg = _encoder_cfg(_require(cfg, "language_encoder"), len(vocab))
    train = load_task(_existing_path(cfg, "train_tsv"), spec)
    dev = load_task(_existing_path(cfg, "dev_tsv"), spec)
    seeds = cfg.get("seeds", [0, 1, 2, 3, 4])
    ckpt = cfg.get("checkpoint")
    all_histories = {}

    def one_run(seed: int) -> float:
        from .encoder import init_encoder_weights

        weights = init_encoder_weights(lang_cfg, np.random.default_rng(seed))
        if ckpt:
            header = load_checkpoint(ckpt)[0]
            prefix = "lang." if header["phase"] == "adapt" else ""
            tmp = {prefix + k: v for k, v in weights.items()}
            load_into(tmp, ckpt, subset_prefix=prefix)
            weights = {k[len(prefix) :]: v for k, v in tmp.items()}
        _, history = finetune_encoder(lang_cfg, weights, vocab, train, dev, spec, seed)
        all_histories[seed] = history
        return history[-1]["dev_metric"]

    result = median_of_runs(one_run, seeds)
    result.update({"task": spec.name, "n_runs": len(seeds), "config_hash": config_hash(cfg)})
    (out / "results.json").write_text(json.dumps(result, indent=2) + "\n", encoding="utf-8")
    rows = [dict(seed=s, **h) for s in seeds for h in all_histories[s]]
    write_history_csv(rows, out / "metrics.csv", config_hash(cfg))
    plot_metric_history(all_histories[seeds[0]], out / "metrics.png", spec.metric)
    _write_manifest(out, "finetune", cfg, seeds[0], ["results.json", "metrics.csv", "metrics.png"])
    print(f"{spec.name}: median {spec.metric} over {len(seeds)} runs = {result['median']:.4f}")
    return 0


def cmd_finetune_full(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(cfg, args)
    spec = _task_spec(cfg)
    ckpt_path = _existing_path(cfg, "checkpoint")
    header, _ = load_checkpoint(ckpt_path)
    lv = tk.Vocab.load(_existing_path(cfg, "lang_vocab"), tk.LANGUAGE)
    cv = tk.Vocab.load(_existing_path(cfg, "clip_vocab"), tk.CLIP)
    snap = header["config"]
    train = load_task(_existing_path(cfg, "train_tsv"), spec)
    dev = load_task(_existing_path(cfg, "dev_tsv"), spec)
    seeds = cfg.get("seeds", [0, 1, 2, 3, 4])
    all_histories = {}

    def one_run(seed: int) -> float:
        model = CrossModalModel(
            EncoderConfig(**snap["language_encoder"]),
            EncoderConfig(**snap["clip_encoder"]),
            CrossModalConfig(**snap["crossmodal"]),
            lv,
            cv,
            seed=seed,
        )
        load_into(model.params, ckpt_path)
        _, history = finetune_full_model(model, train, dev, spec, seed)
        all_histories[seed] = history
        return history[-1]["dev_metric"]

    result = median_of_runs(one_run, seeds)
    result.update({"task": spec.name, "n_runs": len(seeds), "config_hash": config_hash(cfg)})
    (out / "results.json").write_text(json.dumps(result, indent=2) + "\n", encoding="utf-8")
    rows = [dict(seed=s, **h) for s in seeds for h in all_histories[s]]
    write_history_csv(rows, out / "metrics.csv", config_hash(cfg))
    plot_metric_history(all_histories[seeds[0]], out / "metrics.png", spec.metric)
    _write_manifest(out, "finetune-full", cfg, seeds[0], ["results.json", "metrics.csv", "metrics.png"])
    print(f"{spec.name} (full model): median {spec.metric} over {len(seeds)} runs = {result['median']:.4f}")
    return 0


def _load_matrix(path: Path) -> np.ndarray:
    if path.suffix == ".npy":
        return np.load(path)
    return np.loadtxt(path, delimiter=",")


def cmd_analyze_pwcca(args) -> int:
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    out = _out_dir(cfg, args)
    sets: dict[str, RepresentationSet] = {}
    if "matrices" in cfg:
        for name, path in cfg["matrices"].items():
            p = Path(path)
            if not p.exists():
                raise ConfigError(f"matrix {name}: {p} does not exist")
            sets[name] = RepresentationSet(_load_matrix(p), name)
        pairs = cfg.get("pairs") or []
        if not pairs:
            names = list(sets)
            pairs = [[a, b] for i, a in enumerate(names) for b in names[i + 1 :]]
    else:
        ckpt_path = _existing_path(cfg, "checkpoint")
        header, tensors = load_checkpoint(ckpt_path)
        lv = tk.Vocab.load(_existing_path(cfg, "lang_vocab"), tk.LANGUAGE)
        cv = tk.Vocab.load(_existing_path(cfg, "clip_vocab"), tk.CLIP)
        if "words" in cfg:
            words = [w.strip() for w in Path(_existing_path(cfg, "words")).read_text().splitlines() if w.strip()]
        else:
            words = sorted(w for w in lv.ids if not w.startswith("##") and w + "</w>" in cv.ids and w.isalnum())
        lang_rows = np.stack([tensors["lang.tok_emb"][lv.ids[w]] for w in words])
        clip_rows = np.stack([tensors["clip.tok_emb"][cv.ids[w + "</w>"]] for w in words])
        sets["language"] = RepresentationSet(lang_rows, "language")
        sets["clip"] = RepresentationSet(clip_rows, "clip")
        rng = np.random.default_rng(seed)
        sets["random"] = RepresentationSet(rng.uniform(-1, 1, size=lang_rows.shape), "random")
        pairs = cfg.get("pairs", [["language", "clip"], ["language", "random"]])

    scores = {}
    for a, b in pairs:
        if a not in sets or b not in sets:
            raise ConfigError(f"pair ({a}, {b}) references unknown sets (have {sorted(sets)})")
        scores[f"{a}/{b}"] = pwcca_symmetric(sets[a], sets[b])
    chash = config_hash(cfg)
    (out / "pwcca.json").write_text(json.dumps({"config_hash": chash, "scores": scores}, indent=2) + "\n", encoding="utf-8")
    with (out / "pwcca.csv").open("w", encoding="utf-8") as f:
        f.write(f"# config_hash={chash}\npair,xy,yx,mean\n")
        for pair, s in scores.items():
            f.write(f"{pair},{s['xy']:.6f},{s['yx']:.6f},{s['mean']:.6f}\n")
    plot_pwcca_bars({k: v["mean"] for k, v in scores.items()}, out / "pwcca.png")
    _write_manifest(out, "analyze-pwcca", cfg, seed, ["pwcca.json", "pwcca.csv", "pwcca.png"])
    for pair, s in scores.items():
        print(f"{pair}: pwcca {s['xy']:.4f} / reverse {s['yx']:.4f} / mean {s['mean']:.4f}")
    return 0


def cmd_analyze_vgr(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(cfg, args)
    examples = json.loads(_existing_path(cfg, "examples").read_text(encoding="utf-8"))
    if not isinstance(examples, list) or not examples:
        raise ConfigError("examples file must hold a non-empty JSON list")
    stopwords = tk.load_stopwords(cfg.get("stopwords"))
    if "freq" in cfg:
        freq = tk.load_frequencies(_existing_path(cfg, "freq"))
    else:
        freq = tk.word_frequencies(_existing_path(cfg, "reference_corpus"))
    threshold = cfg.get("threshold", 100)
    tokens = [ex["tokens"] for ex in examples]
    correct_a = np.array([ex["correct_adapted"] for ex in examples])
    correct_b = np.array([ex["correct_baseline"] for ex in examples])
    report = build_grounded_report(tokens, correct_a, correct_b, stopwords, freq, threshold)
    chash = config_hash(cfg)
    report.to_json(out / "vgr_report.json", chash)
    report.to_csv(out / "vgr_summary.csv", chash)
    ratios: dict[str, list[float]] = {}
    for ex in report.examples:
        if ex["ratio"] is not None:
            ratios.setdefault(ex["category"], []).append(ex["ratio"])
    plot_grounded_boxes(ratios, out / "vgr_box.png")
    _write_manifest(out, "analyze-vgr", cfg, cfg.get("seed", 0), ["vgr_report.json", "vgr_summary.csv", "vgr_box.png"])
    for cat, s in report.categories.items():
        print(f"{cat}: median {s['median']:.4f} mean {s['mean']:.4f}")
    return 0


def cmd_export_attn(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(cfg, args)
    ckpt_path = _existing_path(cfg, "checkpoint")
    header, _ = load_checkpoint(ckpt_path)
    lv = tk.Vocab.load(_existing_path(cfg, "lang_vocab"), tk.LANGUAGE)
    cv = tk.Vocab.load(_existing_path(cfg, "clip_vocab"), tk.CLIP)
    snap = header["config"]
    model = CrossModalModel(
        EncoderConfig(**snap["language_encoder"]),
        EncoderConfig(**snap["clip_encoder"]),
        CrossModalConfig(**snap["crossmodal"]),
        lv,
        cv,
        seed=header["seed"],
    )
    load_into(model.params, ckpt_path)
    s1 = _require(cfg, "sentence1")
    s2 = cfg.get("sentence2")
    mode = cfg.get("mode", "finetune_pair" if s2 else "finetune_single")
    lang_seq = tk.encode(lv, s1, s2)
    batch = CrossModalBatch(
        language=lang_seq,
        clip=chunk_for_clip(tk.encode(cv, s1, s2), mode, cv),
        segment_ids=tk.segment_ids(lv, lang_seq),
    )
    _, _, maps = cross_forward(model.lang_cfg, model.clip_cfg, model.cross_cfg, model.params, batch)
    lang_tokens = [lv.tokens[i] for i in batch.language.ids]
    clip_tokens = [cv.tokens[i] for i in batch.clip.flat_ids()]
    written = export_attention_maps(maps, lang_tokens, clip_tokens, out)
    clip_content = sum(batch.clip.flat_mask())
    for li, heads in enumerate(maps.lang_to_clip):
        for hi, probs in enumerate(heads):
            plot_attention_heatmap(
                probs[: len(lang_seq), :clip_content],
                lang_tokens,
                clip_tokens[:clip_content],
                out / f"attn_lang_to_clip_layer{li}_head{hi}.png",
                title=f"lang->clip layer {li} head {hi}",
            )
    entropy = attention_entropy(
        maps,
        np.asarray(batch.language.attention_mask),
        np.asarray(batch.clip.flat_mask()),
    )
    (out / "attention_entropy.json").write_text(
        json.dumps({"config_hash": config_hash(cfg), "entropy_nats": entropy}, indent=2) + "\n", encoding="utf-8"
    )
    _write_manifest(out, "export-attn", cfg, header["seed"], [p.name for p in written] + ["attention_entropy.json"])
    print(f"wrote {len(written)} attention CSVs and matching heatmaps to {out}")
    return 0


COMMANDS = {
    "pretrain-toy": cmd_pretrain_toy,
    "adapt": cmd_adapt,
    "extract": cmd_extract,
    "finetune": cmd_finetune,
    "finetune-full": cmd_finetune_full,
    "analyze-pwcca": cmd_analyze_pwcca,
    "analyze-vgr": cmd_analyze_vgr,
    "export-attn": cmd_export_attn,
    "gradcheck": cmd_gradcheck,
    "count-params": cmd_count_params,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xdistill", description="cross-modal distillation pipeline")
    parser.add_argument("--version", action="version", version=f"xdistill {__version__}")
    sub = parser.add_subparsers(dest="phase", required=True)
    for phase in COMMANDS:
        p = sub.add_parser(phase)
        if phase != "gradcheck":
            p.add_argument("--config", required=True, help="JSON config for this phase")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--objectives", default=None, help="comma-separated subset of mlm,match,cliptc")
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.phase](args)
    except (ConfigError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
