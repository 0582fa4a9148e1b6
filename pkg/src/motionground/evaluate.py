"""Evaluation drivers gluing a trained pipeline to corpus splits: retrieval
similarity matrices, grounding score collection, threshold calibration on
the validation split, and the full metrics report."""

from __future__ import annotations

import numpy as np

from .discovery import select_expressions
from .embeddings import TextBank, frame_feature_matrix, positive_indices
from .grounding import calibrate_threshold, jaccard
from .metrics import MetricsReport, discovery_metrics, grounding_metrics, retrieval_metrics
from .model import Pipeline
from .scenes import Corpus, Scene
from .trainer import FeatureConfig


def scene_frames(corpus_or_scenes, feature_cfg: FeatureConfig | None = None,
                 dtype=np.float64) -> dict[int, np.ndarray]:
    cfg = feature_cfg or FeatureConfig()
    scenes = corpus_or_scenes.scenes if isinstance(corpus_or_scenes, Corpus) else corpus_or_scenes
    return {s.index: frame_feature_matrix(s.spec, cfg.noise_sigma,
                                          cfg.background_weight).astype(dtype)
            for s in scenes}


def retrieval_sims(pipe: Pipeline, scenes: list[Scene], frames: dict[int, np.ndarray],
                   bank: TextBank,
                   descriptors: dict[int, np.ndarray] | None = None
                   ) -> tuple[np.ndarray, list[list[int]]]:
    """(scenes x bank) cosine matrix plus per-scene positive bank indices."""
    sims = np.zeros((len(scenes), bank.size))
    positives = []
    for i, scene in enumerate(scenes):
        desc = descriptors[scene.index] if descriptors else None
        e_video = pipe.video_embedding_for(scene, frames[scene.index], desc)
        sims[i] = bank.embeddings @ e_video
        positives.append(positive_indices(bank, scene))
    return sims, positives


def grounding_scores(pipe: Pipeline, scenes: list[Scene], frames: dict[int, np.ndarray],
                     bank: TextBank,
                     descriptors: dict[int, np.ndarray] | None = None
                     ) -> tuple[list[np.ndarray], list[list[int]]]:
    """Relevance score vector and positive track list per ground-truth
    expression across the given scenes."""
    score_lists, positive_lists = [], []
    for scene in scenes:
        desc = (descriptors[scene.index] if descriptors
                else pipe.descriptors_for(scene, frames[scene.index]))
        for gt in scene.ground_truth:
            emb = bank.embeddings[bank.index_of(gt.expression)]
            score_lists.append(pipe.relevance_for(desc, emb))
            positive_lists.append(gt.positive_tracks)
    return score_lists, positive_lists


def evaluate(pipe: Pipeline, corpus: Corpus, bank: TextBank, split: str = "test",
             feature_cfg: FeatureConfig | None = None,
             strategy: str = "adaptive", strategy_kwargs: dict | None = None,
             track_threshold: float | None = None) -> MetricsReport:
    """Full metric suite on one split. The track-selection threshold is
    calibrated on the validation split unless given explicitly."""
    scenes = corpus.split(split)
    if not scenes:
        raise ValueError(f"split {split!r} is empty")
    feature_cfg = feature_cfg or FeatureConfig()
    frames = scene_frames(scenes, feature_cfg)
    descriptors = {s.index: pipe.descriptors_for(s, frames[s.index]) for s in scenes}

    if track_threshold is None:
        val_scenes = corpus.split("val")
        val_frames = scene_frames(val_scenes, feature_cfg)
        val_scores, val_pos = grounding_scores(pipe, val_scenes, val_frames, bank)
        track_threshold = calibrate_threshold(val_scores, val_pos)

    sims, positives = retrieval_sims(pipe, scenes, frames, bank, descriptors)
    retrieval = retrieval_metrics(sims, positives)

    per_scene = []
    js, fs = [], []
    discovered_sets, gt_expr_lists = [], []
    for i, scene in enumerate(scenes):
        desc = descriptors[scene.index]
        scene_js, scene_fs = [], []
        for gt in scene.ground_truth:
            emb = bank.embeddings[bank.index_of(gt.expression)]
            scores = pipe.relevance_for(desc, emb)
            pred = np.flatnonzero(scores >= track_threshold)
            j, f = grounding_metrics(pred, gt.positive_tracks, scene.tracks.n_tracks)
            scene_js.append(j)
            scene_fs.append(f)
        js.extend(scene_js)
        fs.extend(scene_fs)
        dset = select_expressions(sims[i], bank, strategy, **(strategy_kwargs or {}))
        discovered_sets.append(dset)
        gt_expr_lists.append([gt.expression for gt in scene.ground_truth])
        per_scene.append({
            "scene": scene.index,
            "n_expressions": len(scene.ground_truth),
            "mean_j": float(np.mean(scene_js)),
            "mean_f": float(np.mean(scene_fs)),
            "n_discovered": dset.size,
        })

    disc = discovery_metrics(discovered_sets, gt_expr_lists, bank)
    return MetricsReport(
        v2t_r1=retrieval["v2t_r1"], v2t_r5=retrieval["v2t_r5"], v2t_r10=retrieval["v2t_r10"],
        t2v_r1=retrieval["t2v_r1"], t2v_r5=retrieval["t2v_r5"], t2v_r10=retrieval["t2v_r10"],
        mean_j=float(np.mean(js)), mean_f=float(np.mean(fs)),
        coverage=disc["coverage"], precision=disc["precision"],
        diversity=disc["diversity"], avg_expressions=disc["avg_expressions"],
        track_threshold=float(track_threshold), per_scene=per_scene,
    )
