"""Text-track relevance: per-head cosine between projected text and
projected motion descriptors, combined by head mean, plus track-selection
decoders (fixed threshold and Otsu split) and threshold calibration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .embeddings import EMBED_DIM
from .layers import Linear, ParamStore
from .motion_encoder import MotionDescriptors


@dataclass
class GroundingConfig:
    heads: int = 4          # 1 reproduces the single-head variant
    init_sigma: float = 0.01

    def validate(self) -> None:
        if self.heads < 1:
            raise ValueError("grounding needs at least one head")


@dataclass
class RelevanceScores:
    scores: np.ndarray    # (N,), each in [-1, 1]
    per_head: np.ndarray  # (heads, N)


class GroundingHead:
    """Learnable square query/key maps per head, initialized near identity
    so untrained relevance starts at raw cosine similarity."""

    def __init__(self, store: ParamStore, cfg: GroundingConfig, rng: np.random.RandomState,
                 prefix: str = "grounding"):
        cfg.validate()
        self.cfg = cfg
        self.q_maps = [Linear(store, f"{prefix}.q{h}", EMBED_DIM, EMBED_DIM, rng,
                              bias=False, init="identity_noise", sigma=cfg.init_sigma)
                       for h in range(cfg.heads)]
        self.k_maps = [Linear(store, f"{prefix}.k{h}", EMBED_DIM, EMBED_DIM, rng,
                              bias=False, init="identity_noise", sigma=cfg.init_sigma)
                       for h in range(cfg.heads)]
        # score temperature for the probability decoder, kept positive via exp
        self.log_tau = store.register(f"{prefix}.log_tau", np.array(0.0))

    def project_text(self, text_emb) -> list[Tensor]:
        """Unit-normalized per-head query projections of (E, 512) embeddings."""
        e = ad.as_tensor(text_emb)
        out = []
        for h, lin in enumerate(self.q_maps):
            try:
                out.append(ad.l2_normalize_rows(lin(e)))
            except ad.NumericsError:
                raise ad.NumericsError(
                    f"projected query has zero norm in head {h}; degenerate parameters"
                ) from None
        return out

    def project_descriptors(self, descriptors) -> list[Tensor]:
        m = ad.as_tensor(descriptors)
        return [ad.l2_normalize_rows(lin(m)) for lin in self.k_maps]

    def scores_graph(self, q_proj: list[Tensor], k_proj: list[Tensor]) -> tuple[Tensor, Tensor]:
        """(combined (E, N), per_head (H, E, N)) from projected embeddings."""
        heads = [ad.matmul(q, ad.transpose(k, (1, 0))) for q, k in zip(q_proj, k_proj)]
        per_head = ad.stack(heads, axis=0)
        return ad.mean(per_head, axis=0), per_head

    def tau(self) -> Tensor:
        return ad.exp(self.log_tau)


def relevance(head: GroundingHead, text_emb: np.ndarray,
              descriptors: MotionDescriptors | np.ndarray) -> RelevanceScores:
    """Relevance of each track to one expression embedding.

    Descriptor rows are processed in content-canonical order and restored,
    so permuting the caller's rows permutes the scores bit-for-bit."""
    from .util import canonical_row_order

    m = descriptors.descriptors if isinstance(descriptors, MotionDescriptors) else descriptors
    if m.shape[0] == 0:
        raise ValueError("no descriptors to score")
    order = canonical_row_order(m)
    restore = np.empty_like(order)
    restore[order] = np.arange(order.size)
    with ad.no_grad():
        q = head.project_text(np.asarray(text_emb)[None, :])
        k = head.project_descriptors(np.ascontiguousarray(m[order]))
        combined, per_head = head.scores_graph(q, k)
    return RelevanceScores(scores=combined.data[0][restore].copy(),
                           per_head=per_head.data[:, 0, :][:, restore].copy())


def relevance_probability(r, tau_s: float) -> np.ndarray:
    """sigmoid(r / tau_s); the decoder behind the BCE alignment variants."""
    if tau_s <= 0:
        raise ValueError("score temperature must be positive")
    return 1.0 / (1.0 + np.exp(-np.asarray(r, dtype=np.float64) / tau_s))


def select_tracks(scores: np.ndarray, mode: str = "threshold",
                  threshold: float | None = None) -> np.ndarray:
    """Boolean mask of selected tracks; ties at a threshold are selected."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("cannot select from an empty score vector")
    if mode == "threshold":
        if threshold is None:
            raise ValueError("threshold mode needs a threshold (calibrate on validation)")
        return scores >= threshold
    if mode == "otsu":
        return scores >= otsu_threshold(scores)
    raise ValueError(f"unknown selection mode {mode!r}")


def otsu_threshold(scores: np.ndarray) -> float:
    """Two-class split maximizing between-class variance; returns the lowest
    score of the upper class (selection is inclusive). All split points are
    tried; ties prefer the more inclusive (lower) threshold."""
    values = np.sort(np.unique(np.asarray(scores, dtype=np.float64)))
    if values.size == 1:
        return float(values[0])
    s = np.sort(scores)
    n = s.size
    best_gain, best_thr = -np.inf, float(values[0])
    for thr in values[1:]:
        k = int(np.searchsorted(s, thr, side="left"))
        lo, hi = s[:k], s[k:]
        gain = lo.size * hi.size * (lo.mean() - hi.mean()) ** 2
        if gain > best_gain:
            best_gain, best_thr = gain, float(thr)
    return best_thr


def jaccard(pred_mask: np.ndarray, positive: list[int]) -> float:
    pred = set(np.flatnonzero(pred_mask).tolist())
    pos = set(positive)
    if not pred and not pos:
        return 1.0
    return len(pred & pos) / len(pred | pos)


def calibrate_threshold(score_lists: list[np.ndarray],
                        positive_lists: list[list[int]]) -> float:
    """Threshold maximizing mean Jaccard over expressions.

    Candidates are all observed scores (selection is inclusive, so these
    are the only points where any expression's J changes); ties prefer the
    lowest threshold."""
    if not score_lists:
        raise ValueError("nothing to calibrate on")
    candidates = np.sort(np.unique(np.concatenate(score_lists)))
    total = np.zeros(candidates.size)
    for scores, positive in zip(score_lists, positive_lists):
        order = np.argsort(-scores, kind="stable")
        sorted_desc = scores[order]
        pos = np.isin(order, positive)
        cum_inter = np.cumsum(pos)
        n_pos = len(positive)
        # selected count at each candidate threshold (inclusive >=)
        k = np.searchsorted(-sorted_desc, -candidates, side="right")
        inter = np.where(k > 0, cum_inter[np.maximum(k - 1, 0)], 0)
        union = k + n_pos - inter
        j = np.where(union > 0, inter / np.maximum(union, 1), 1.0)
        total += j
    best = int(np.argmax(total))
    return float(candidates[best])
