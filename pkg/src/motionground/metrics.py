"""Evaluation: retrieval R@K in both directions, track-level grounding
J/F (set IoU and set F1 stand in for mask metrics, since the corpus is
track-native), and discovery coverage/precision/diversity/avg#."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .discovery import DiscoveredSet
from .embeddings import TextBank, normalize_expression


def _ranked_desc(values: np.ndarray) -> np.ndarray:
    """Order by value descending, ties by ascending index."""
    return np.lexsort((np.arange(values.size), -values))


def retrieval_metrics(sims: np.ndarray, positives: list[list[int]],
                      ks: tuple[int, ...] = (1, 5, 10)) -> dict[str, float]:
    """sims: (scenes, bank). V2T ranks bank entries per scene; T2V ranks
    scenes per bank expression that is positive for at least one scene."""
    S, N = sims.shape
    if len(positives) != S:
        raise ValueError(f"{len(positives)} positive sets for {S} scenes")
    for i, pos in enumerate(positives):
        if len(pos) == 0:
            raise ValueError(f"scene {i} has no positive expressions")

    out: dict[str, float] = {}
    pos_sets = [set(p) for p in positives]
    for k in ks:
        hits = 0
        for i in range(S):
            top = _ranked_desc(sims[i])[:k]
            hits += any(int(t) in pos_sets[i] for t in top)
        out[f"v2t_r{k}"] = hits / S

    expr_scenes = {}
    for i, pos in enumerate(positives):
        for p in pos:
            expr_scenes.setdefault(int(p), set()).add(i)
    for k in ks:
        hits = 0
        for p, scene_set in sorted(expr_scenes.items()):
            top = _ranked_desc(sims[:, p])[:k]
            hits += any(int(t) in scene_set for t in top)
        out[f"t2v_r{k}"] = hits / len(expr_scenes) if expr_scenes else 0.0
    return out


def grounding_metrics(predicted: list[int] | np.ndarray, positive: list[int],
                      n_tracks: int) -> tuple[float, float]:
    """(J, F): set IoU against the positive tracks, and the harmonic mean
    of set precision and recall."""
    pred = set(int(i) for i in np.asarray(predicted).tolist())
    if pred and (min(pred) < 0 or max(pred) >= n_tracks):
        raise ValueError(f"predicted track indices out of range [0, {n_tracks})")
    pos = set(positive)
    if not pred and not pos:
        return 1.0, 1.0
    if not pred or not pos:
        return 0.0, 0.0
    inter = len(pred & pos)
    j = inter / len(pred | pos)
    precision = inter / len(pred)
    recall = inter / len(pos)
    f = 0.0 if inter == 0 else 2 * precision * recall / (precision + recall)
    return j, f


def discovery_metrics(discovered: list[DiscoveredSet],
                      gt_expressions: list[list[str]],
                      bank: TextBank) -> dict:
    """Per-corpus means of coverage, precision, diversity (distinct motion
    classes among discovered entries), and discovered-set size."""
    if len(discovered) != len(gt_expressions):
        raise ValueError("one discovered set per scene required")
    tags_present = any(t is not None for t in bank.class_tags)
    coverage, precision, diversity, counts = [], [], [], []
    empty_flagged = False
    for dset, gts in zip(discovered, gt_expressions):
        gt_norm = {normalize_expression(e) for e in gts}
        found = {normalize_expression(e) for e in dset.expressions()}
        coverage.append(len(found & gt_norm) / len(gt_norm) if gt_norm else 0.0)
        if dset.size == 0:
            precision.append(0.0)
            empty_flagged = True
        else:
            precision.append(len(found & gt_norm) / dset.size)
        counts.append(dset.size)
        if tags_present:
            classes = {bank.class_tags[k] for k in dset.indices()
                       if bank.class_tags[k] is not None}
            diversity.append(len(classes))
    return {
        "coverage": float(np.mean(coverage)),
        "precision": float(np.mean(precision)),
        "diversity": float(np.mean(diversity)) if tags_present else None,
        "avg_expressions": float(np.mean(counts)),
        "empty_discovery_flag": empty_flagged,
    }


@dataclass
class MetricsReport:
    v2t_r1: float
    v2t_r5: float
    v2t_r10: float
    t2v_r1: float
    t2v_r5: float
    t2v_r10: float
    mean_j: float
    mean_f: float
    coverage: float
    precision: float
    diversity: float | None
    avg_expressions: float
    track_threshold: float
    per_scene: list[dict] = field(default_factory=list)

    @property
    def mean_jf(self) -> float:
        return (self.mean_j + self.mean_f) / 2.0

    def as_dict(self) -> dict:
        return {
            "v2t": {"r1": self.v2t_r1, "r5": self.v2t_r5, "r10": self.v2t_r10},
            "t2v": {"r1": self.t2v_r1, "r5": self.t2v_r5, "r10": self.t2v_r10},
            "grounding": {"mean_j": self.mean_j, "mean_f": self.mean_f,
                          "mean_jf": self.mean_jf,
                          "track_threshold": self.track_threshold},
            "discovery": {"coverage": self.coverage, "precision": self.precision,
                          "diversity": self.diversity,
                          "avg_expressions": self.avg_expressions},
        }

    def write_csv(self, path: str) -> None:
        if not self.per_scene:
            return
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(self.per_scene[0]))
            writer.writeheader()
            writer.writerows(self.per_scene)
