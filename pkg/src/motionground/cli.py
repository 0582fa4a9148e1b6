"""Operator surface: corpus generation, bank building, training, evaluation,
discovery, grounding, and the gradient audit.

Structured JSON goes to stdout (or --out); human-readable progress goes to
stderr. Exit codes: 0 success, 1 configuration error, 2 data error,
3 numeric failure. Thread limits are applied before numpy loads, so
--threads/--deterministic bound the BLAS pool for the whole process.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


class DataError(RuntimeError):
    pass


def _apply_thread_limits(args) -> None:
    threads = args.threads
    if args.deterministic and threads is None:
        threads = 1
    if threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                    "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
            os.environ[var] = str(threads)


def _emit(payload: dict, args) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if getattr(args, "out", None):
        out_dir = os.path.dirname(os.path.abspath(args.out))
        os.makedirs(out_dir, exist_ok=True)
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        print(f"wrote {args.out}", file=sys.stderr)
    else:
        print(text)


def _status(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_config(args):
    from .config import load_run_config

    cfg = load_run_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg.corpus.seed = args.seed
        cfg.train.seed = args.seed
        cfg.bank.seed = args.seed
    return cfg


def _require(path: str, kind: str) -> str:
    if not os.path.exists(path):
        raise DataError(f"{kind} not found: {path}")
    return path


def _load_corpus(path):
    from .scenes import load_corpus

    _require(path, "corpus")
    _require(path + ".manifest.json", "corpus manifest")
    return load_corpus(path)


def _load_bank(path):
    from .checkpoint import manifest_path
    from .embeddings import load_bank

    _require(manifest_path(path), "bank manifest")
    return load_bank(path)


def _load_pipeline(path, corpus, bank):
    from .model import Pipeline
    from .trainer import bank_content_hash, corpus_content_hash
    from . import autodiff as ad
    import numpy as np

    from .checkpoint import manifest_path

    _require(manifest_path(path), "checkpoint manifest")
    arrays_extra = None
    # parameters were trained under the checkpointed dtype
    from .checkpoint import load_arrays

    arrays, extra = load_arrays(path)
    dtype = extra.get("config", {}).get("train", {}).get("dtype", "float32")
    ad.set_default_dtype(np.float32 if dtype == "float32" else np.float64)
    pipe = Pipeline.__new__(Pipeline)
    from .model import ModelConfig

    pipe.__init__(ModelConfig.from_dict(extra["model_config"]))
    pipe.store.load_values({k: v for k, v in arrays.items() if k in pipe.store})
    if "corpus_hash" in extra and corpus is not None:
        if extra["corpus_hash"] != corpus_content_hash(corpus):
            raise DataError("checkpoint corpus hash does not match the given corpus")
    if "bank_hash" in extra and bank is not None:
        if extra["bank_hash"] != bank_content_hash(bank):
            raise DataError("checkpoint bank hash does not match the given bank")
    return pipe, extra


def cmd_gen(args) -> dict:
    from .scenes import build_corpus, motion_class_separability, save_corpus

    cfg = _load_config(args)
    corpus = build_corpus(cfg.corpus)
    separability = motion_class_separability(corpus)
    corpus.manifest["separability"] = separability
    save_corpus(corpus, args.corpus)
    _status(f"generated {cfg.corpus.count} scenes -> {args.corpus}")
    return {
        "command": "gen",
        "corpus": args.corpus,
        "scenes": cfg.corpus.count,
        "agent_class_counts": corpus.manifest["agent_class_counts"],
        "separability": separability,
        "config": cfg.as_dict(),
    }


def cmd_bank(args) -> dict:
    from .embeddings import bank_for_corpus, save_bank

    cfg = _load_config(args)
    corpus = _load_corpus(args.corpus)
    extras = []
    if args.extra:
        with open(_require(args.extra, "extra expressions"), encoding="utf-8") as fh:
            extras = [(line.strip(), None) for line in fh if line.strip()]
    bank = bank_for_corpus(corpus, cfg.bank.distractor_ratio, cfg.bank.seed, extras)
    save_bank(bank, args.bank)
    _status(f"bank of {bank.size} expressions -> {args.bank}")
    return {
        "command": "bank",
        "bank": args.bank,
        "size": bank.size,
        "true_expressions": len(corpus.all_expressions()),
        "config": cfg.as_dict(),
    }


def cmd_train(args) -> dict:
    import numpy as np

    from . import autodiff as ad
    from .losses import LossConfig  # noqa: F401  (config already built)
    from .model import Pipeline
    from .trainer import Trainer
    from .util import dump_json

    cfg = _load_config(args)
    corpus = _load_corpus(args.corpus)
    bank = _load_bank(args.bank)
    ad.set_default_dtype(cfg.train.np_dtype)
    pipe = Pipeline(cfg.model)
    trainer = Trainer(pipe, corpus, bank, cfg.train, cfg.loss, cfg.features)
    os.makedirs(args.out_dir, exist_ok=True)
    manifest = {
        "config": cfg.as_dict(),
        "corpus_hash": trainer.corpus_hash,
        "bank_hash": trainer.bank_hash,
        "total_steps": trainer.total_steps,
        "package_version": _version(),
    }
    dump_json(manifest, os.path.join(args.out_dir, "run_manifest.json"))
    result = trainer.run(out_dir=args.out_dir, quiet=args.quiet)
    return {
        "command": "train",
        "out_dir": args.out_dir,
        "best_val_j": result.best_val_j,
        "best_epoch": result.best_epoch,
        "steps": trainer.global_step,
        "best_checkpoint": result.best_checkpoint,
        "final_checkpoint": result.final_checkpoint,
        "training_log": result.log_path,
        "history": result.history,
        "config": cfg.as_dict(),
    }


def cmd_eval(args) -> dict:
    from .evaluate import evaluate
    from .trainer import FeatureConfig

    cfg = _load_config(args)
    corpus = _load_corpus(args.corpus)
    bank = _load_bank(args.bank)
    pipe, extra = _load_pipeline(args.checkpoint, corpus, bank)
    feature_cfg = FeatureConfig(**extra["config"]["features"]) \
        if "config" in extra else cfg.features
    report = evaluate(pipe, corpus, bank, split=args.split, feature_cfg=feature_cfg,
                      strategy=cfg.selection.expression_strategy,
                      strategy_kwargs=cfg.selection.strategy_kwargs(),
                      track_threshold=cfg.selection.track_threshold)
    if args.scene_csv:
        report.write_csv(args.scene_csv)
        _status(f"per-scene rows -> {args.scene_csv}")
    return {
        "command": "eval",
        "split": args.split,
        "metrics": report.as_dict(),
        "config": cfg.as_dict(),
    }


def _grounding_record(pipe, bank, scene, frames, expression, track_mode,
                      track_threshold) -> dict:
    import numpy as np

    from . import autodiff as ad
    from .grounding import otsu_threshold, select_tracks

    desc = pipe.descriptors_for(scene, frames)
    emb = bank.embeddings[bank.index_of(expression)]
    with ad.no_grad():
        q = pipe.grounding.project_text(np.asarray(emb)[None, :])
        k = pipe.grounding.project_descriptors(desc)
        combined, per_head = pipe.grounding.scores_graph(q, k)
    scores = combined.data[0]
    heads = per_head.data[:, 0, :]
    if track_mode == "otsu":
        threshold = otsu_threshold(scores)
    else:
        threshold = track_threshold if track_threshold is not None else 0.0
    mask = select_tracks(scores, "threshold", threshold=threshold)
    return {
        "expression": expression,
        "scores": [float(s) for s in scores],
        "selected_tracks": [int(i) for i in mask.nonzero()[0]],
        "threshold": float(threshold),
        "head_attribution": [[float(v) for v in row] for row in heads],
    }


def cmd_discover(args) -> dict:
    from .discovery import select_expressions
    from .embeddings import frame_feature_matrix
    from .trainer import FeatureConfig

    cfg = _load_config(args)
    corpus = _load_corpus(args.corpus)
    bank = _load_bank(args.bank)
    pipe, extra = _load_pipeline(args.checkpoint, corpus, bank)
    feature_cfg = FeatureConfig(**extra["config"]["features"]) \
        if "config" in extra else cfg.features
    scenes = {s.index: s for s in corpus.scenes}
    if args.scene not in scenes:
        raise DataError(f"scene {args.scene} not in corpus")
    scene = scenes[args.scene]
    frames = frame_feature_matrix(scene.spec, feature_cfg.noise_sigma,
                                  feature_cfg.background_weight)
    strategy = args.strategy or cfg.selection.expression_strategy
    kwargs = dict(cfg.selection.strategy_kwargs())
    if args.top_k is not None:
        strategy, kwargs = "top_k", {"k": args.top_k}
    e_video = pipe.video_embedding_for(scene, frames)
    sims = bank.embeddings @ e_video
    dset = select_expressions(sims, bank, strategy, **kwargs)
    records = [
        _grounding_record(pipe, bank, scene, frames, expr,
                          cfg.selection.track_mode, cfg.selection.track_threshold)
        for _, expr, _ in dset.entries
    ]
    return {
        "command": "discover",
        "scene": args.scene,
        "strategy": {"name": strategy, **kwargs},
        "entries": [{"bank_index": k, "expression": e, "similarity": s}
                    for k, e, s in dset.entries],
        "grounding": records,
        "ground_truth": [gt.expression for gt in scene.ground_truth],
        "config": cfg.as_dict(),
    }


def cmd_ground(args) -> dict:
    from .embeddings import frame_feature_matrix, normalize_expression
    from .trainer import FeatureConfig

    cfg = _load_config(args)
    corpus = _load_corpus(args.corpus)
    bank = _load_bank(args.bank)
    pipe, extra = _load_pipeline(args.checkpoint, corpus, bank)
    feature_cfg = FeatureConfig(**extra["config"]["features"]) \
        if "config" in extra else cfg.features
    scenes = {s.index: s for s in corpus.scenes}
    if args.scene not in scenes:
        raise DataError(f"scene {args.scene} not in corpus")
    scene = scenes[args.scene]
    frames = frame_feature_matrix(scene.spec, feature_cfg.noise_sigma,
                                  feature_cfg.background_weight)
    record = _grounding_record(pipe, bank, scene, frames,
                               normalize_expression(args.expression),
                               cfg.selection.track_mode, cfg.selection.track_threshold)
    if args.csv_prefix:
        _write_grounding_csvs(record, args.csv_prefix)
    record.update({"command": "ground", "scene": args.scene, "config": cfg.as_dict()})
    return record


def _write_grounding_csvs(record: dict, prefix: str) -> None:
    import csv

    with open(prefix + ".scores.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["track", "score"])
        for i, s in enumerate(record["scores"]):
            writer.writerow([i, s])
    with open(prefix + ".heads.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["head"] + [f"track_{i}" for i in range(len(record["scores"]))])
        for h, row in enumerate(record["head_attribution"]):
            writer.writerow([h] + list(row))
    _status(f"relevance matrices -> {prefix}.scores.csv, {prefix}.heads.csv")


def cmd_gradcheck(args) -> dict:
    from .gradaudit import full_pipeline_gradcheck

    cfg = _load_config(args)
    report = full_pipeline_gradcheck(cfg, tolerance=args.tolerance)
    payload = {
        "command": "gradcheck",
        "passed": report["passed"],
        "max_rel_error": report["max_rel_error"],
        "tolerance": args.tolerance,
        "variants": report["variants"],
        "parameters_checked": report["parameters_checked"],
        "config": cfg.as_dict(),
    }
    if not report["passed"]:
        _emit(payload, args)
        from . import autodiff as ad

        raise ad.NumericsError(
            f"gradient audit failed: max relative error {report['max_rel_error']:.3e}"
        )
    return payload


def _version() -> str:
    from . import __version__

    return __version__


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="motionground",
        description="Motion-centric video understanding on synthetic track corpora",
    )
    parser.add_argument("--version", action="version", version=_versionsafe())
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="run-config JSON file")
        p.add_argument("--seed", type=int, help="override corpus/train/bank seeds")
        p.add_argument("--out", help="write the JSON result here instead of stdout")
        p.add_argument("--deterministic", action="store_true",
                       help="single-threaded math with fixed reduction order")
        p.add_argument("--threads", type=int, help="BLAS/OpenMP thread cap")

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--corpus", required=True, help="output corpus path (JSONL)")
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("bank", help="build a text bank from a corpus")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--bank", required=True, help="output bank path prefix")
    p.add_argument("--extra", help="file of extra expressions, one per line")
    p.set_defaults(fn=cmd_bank)

    p = sub.add_parser("train", help="train the full pipeline")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="full metric report on a split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--scene-csv", help="write per-scene metric rows here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("discover", help="query-free expression discovery on one scene")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--scene", type=int, required=True)
    p.add_argument("--strategy", choices=("top_k", "percentile", "threshold", "adaptive"))
    p.add_argument("--top-k", type=int, help="shorthand for --strategy top_k")
    p.set_defaults(fn=cmd_discover)

    p = sub.add_parser("ground", help="ground one expression against a scene")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--scene", type=int, required=True)
    p.add_argument("--expression", required=True)
    p.add_argument("--csv-prefix", help="also emit score/head CSV matrices")
    p.set_defaults(fn=cmd_ground)

    p = sub.add_parser("gradcheck", help="finite-difference audit of every module")
    common(p)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def _versionsafe() -> str:
    try:
        return _version()
    except Exception:  # pragma: no cover
        return "unknown"


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_thread_limits(args)
    try:
        payload = args.fn(args)
    except Exception as err:  # mapped to documented exit codes
        code = _exit_code_for(err)
        print(f"error: {err}", file=sys.stderr)
        return code
    _emit(payload, args)
    return 0


def _exit_code_for(err: Exception) -> int:
    from . import autodiff as ad
    from .checkpoint import CheckpointError
    from .config import ConfigError
    from .embeddings import BankError
    from .scenes import SceneError
    from .trainer import TrainError

    if isinstance(err, (ConfigError, ValueError)) and not isinstance(
            err, (BankError, SceneError)):
        return 1
    if isinstance(err, (ad.NumericsError, TrainError)):
        return 3
    if isinstance(err, (DataError, CheckpointError, BankError, SceneError,
                        FileNotFoundError, KeyError)):
        return 2
    raise err


if __name__ == "__main__":
    sys.exit(main())
