"""Query-free expression discovery: a learnable global video embedding,
bank scoring, and the selection strategies (top-k, percentile, threshold,
adaptive largest-gap)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .embeddings import EMBED_DIM, TextBank
from .layers import Linear, ParamStore
from .motion_encoder import pooled_summary_graph
from .util import canonical_row_order, cosine


@dataclass
class DiscoveryConfig:
    # weight of the pooled motion summary in the fused video embedding;
    # 0 reduces to pooling frame features alone
    motion_alpha: float = 1.0
    # random init keeps an untrained model at chance; small scale lets the
    # learned component dominate the normalized embedding early in training
    init_scale: float = 0.1


class DiscoveryHead:
    """512->512 projection on pooled features. Random init keeps an
    untrained model at chance-level retrieval."""

    def __init__(self, store: ParamStore, cfg: DiscoveryConfig, rng: np.random.RandomState,
                 prefix: str = "discovery"):
        self.cfg = cfg
        self.proj = Linear(store, f"{prefix}.head", EMBED_DIM, EMBED_DIM, rng,
                           init="gauss", sigma=cfg.init_scale / np.sqrt(EMBED_DIM))

    def video_embedding_graph(self, frame_mean, pooled_motion: Tensor | None) -> Tensor:
        """normalize(headProj(mean_t f_t + alpha * pooled_motion)); rows (B, 512)."""
        fused = ad.as_tensor(frame_mean)
        if self.cfg.motion_alpha != 0.0:
            if pooled_motion is None:
                raise ValueError("motion_alpha != 0 requires a pooled motion summary")
            fused = ad.add(fused, ad.mul(pooled_motion, self.cfg.motion_alpha))
        try:
            return ad.l2_normalize_rows(self.proj(fused))
        except ad.NumericsError:
            raise ad.NumericsError("video embedding collapsed to zero norm") from None


def mean_frame_feature(frames: np.ndarray) -> np.ndarray:
    """Mean over frames, summed in content-canonical row order so frame
    reorderings (e.g. reversal) give a bit-identical result."""
    order = canonical_row_order(frames)
    return frames[order].sum(axis=0) / frames.shape[0]


def video_embedding(head: DiscoveryHead, frames: np.ndarray,
                    descriptors: np.ndarray | None) -> np.ndarray:
    if frames.shape[0] < 1:
        raise ValueError("need at least one frame")
    fmean = mean_frame_feature(np.asarray(frames))
    with ad.no_grad():
        pooled = None
        if head.cfg.motion_alpha != 0.0:
            pooled = pooled_summary_graph(Tensor(descriptors))
        out = head.video_embedding_graph(Tensor(fmean[None, :]), pooled)
    return out.data[0].copy()


def score_bank(e_video: np.ndarray, bank: TextBank) -> np.ndarray:
    """Cosine of the video embedding with every bank entry. Computed rowwise
    so adding or duplicating entries never perturbs other entries' scores."""
    if bank.size == 0:
        raise ValueError("bank is empty")
    return np.array([cosine(e_video, bank.embeddings[k]) for k in range(bank.size)])


@dataclass
class DiscoveredSet:
    entries: list[tuple[int, str, float]]  # (bank index, expression, similarity)

    @property
    def size(self) -> int:
        return len(self.entries)

    def indices(self) -> list[int]:
        return [k for k, _, _ in self.entries]

    def expressions(self) -> list[str]:
        return [e for _, e, _ in self.entries]


def _ranked(scores: np.ndarray) -> np.ndarray:
    """Indices by similarity descending, ties broken by ascending index."""
    return np.lexsort((np.arange(scores.size), -scores))


def select_expressions(scores: np.ndarray, bank: TextBank, strategy: str, *,
                       k: int | None = None, percentile: float = 70.0,
                       threshold: float | None = None,
                       max_adaptive: int = 10) -> DiscoveredSet:
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.size
    if n < 1:
        raise ValueError("no scores to select from")
    order = _ranked(scores)

    if strategy == "top_k":
        if k is None or k < 1:
            raise ValueError(f"top_k needs k >= 1, got {k}")
        chosen = order[: min(k, n)]
    elif strategy == "percentile":
        if not (0.0 <= percentile <= 100.0):
            raise ValueError(f"percentile must be in [0, 100], got {percentile}")
        # nearest-rank on the descending order: keep the top
        # ceil((1 - p/100) * n) ranks, extended to ties at the cutoff;
        # computed as n - floor(p*n/100) to dodge float round-off
        m = max(1, n - math.floor(percentile * n / 100.0 + 1e-9))
        cutoff = scores[order[m - 1]]
        chosen = order[scores[order] >= cutoff]
    elif strategy == "threshold":
        if threshold is None or not np.isfinite(threshold):
            raise ValueError("threshold strategy needs a finite threshold")
        chosen = order[scores[order] >= threshold]
    elif strategy == "adaptive":
        window = min(max_adaptive, n - 1)
        if window < 1:
            chosen = order[:1]
        else:
            sorted_scores = scores[order]
            gaps = sorted_scores[:window] - sorted_scores[1: window + 1]
            cut = int(np.argmax(gaps)) + 1  # first largest gap
            chosen = order[:cut]
    else:
        raise ValueError(f"unknown selection strategy {strategy!r}")

    return DiscoveredSet(entries=[
        (int(i), bank.expressions[int(i)], float(scores[int(i)])) for i in chosen
    ])
