"""The training objective: multi-positive InfoNCE over bank similarities,
blended with per-expression spatial terms (diversity floor on the score
spread, L1 sparsity, and an alignment loss in ranking/BCE/weighted-BCE/
focal variants)."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

PROB_CLAMP = 1e-7
ALIGNMENT_VARIANTS = ("ranking", "bce", "weighted_bce", "focal")


@dataclass
class LossConfig:
    temperature: float = 0.1       # InfoNCE tau
    spatial_weight: float = 0.1    # lambda blending global vs spatial
    margin: float = 0.2            # ranking margin
    diversity_floor: float = 0.1
    sparsity_coeff: float = 0.01
    alignment: str = "ranking"
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    in_batch_negatives: bool = False

    def validate(self) -> None:
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not (0.0 <= self.spatial_weight <= 1.0):
            raise ValueError("spatial weight must lie in [0, 1]")
        if self.margin < 0:
            raise ValueError("margin must be nonnegative")
        if self.alignment not in ALIGNMENT_VARIANTS:
            raise ValueError(f"alignment must be one of {ALIGNMENT_VARIANTS}")


@dataclass
class LossBreakdown:
    total: float
    global_loss: float
    spatial: float
    diversity: float
    sparsity: float
    alignment: float

    def as_row(self) -> dict:
        return {
            "total": self.total, "global": self.global_loss, "spatial": self.spatial,
            "diversity": self.diversity, "sparsity": self.sparsity,
            "alignment": self.alignment,
        }


def global_infonce(sims: Tensor, positives: list[list[int]], tau: float,
                   in_batch: bool = False) -> Tensor:
    """Multi-positive InfoNCE: mean over rows of
    -log(sum_{k in P_b} exp(s/tau) / sum_k exp(s/tau)), log-sum-exp form.

    The denominator runs over the whole bank; `in_batch` restricts it to
    the union of the batch's positive indices."""
    B = sims.shape[0]
    if len(positives) != B:
        raise ValueError(f"{len(positives)} positive sets for {B} rows")
    for b, pos in enumerate(positives):
        if len(pos) == 0:
            raise ValueError(f"row {b} has an empty positive set")
    scaled = ad.mul(sims, 1.0 / tau)
    if in_batch:
        union = sorted({k for pos in positives for k in pos})
        remap = {k: i for i, k in enumerate(union)}
        scaled = ad.take_columns(scaled, union)
        positives = [[remap[k] for k in pos] for pos in positives]
    denom = ad.logsumexp_rows(scaled)  # (B,)
    numers = []
    for b, pos in enumerate(positives):
        row = ad.take_rows(scaled, [b])
        numers.append(ad.reshape(ad.logsumexp_rows(ad.take_columns(row, pos)), ()))
    numer = ad.stack(numers)
    return ad.mean(ad.sub(denom, numer))


def diversity_loss(r: Tensor, floor: float = 0.1) -> Tensor:
    """max(0, floor - std(r)) with the population standard deviation.

    A vanishing epsilon inside the sqrt keeps the gradient finite for
    constant score vectors without moving the value beyond 1e-10."""
    centered = ad.sub(r, ad.mean(r))
    var = ad.mean(ad.mul(centered, centered))
    std = ad.sqrt(ad.add(var, 1e-20))
    return ad.relu(ad.sub(floor, std))


def sparsity_loss(r: Tensor, coeff: float = 0.01) -> Tensor:
    """coeff * ||r||_1, deliberately unnormalized."""
    return ad.mul(ad.sum_(ad.abs_(r)), coeff)


def ranking_alignment(r: Tensor, positive: list[int], negative: list[int],
                      margin: float = 0.2) -> Tensor:
    """Mean hinge over all (positive, negative) pairs:
    max(0, margin - r_pos + r_neg)."""
    if len(positive) == 0 or len(negative) == 0:
        warnings.warn("empty positive or negative track set; alignment term skipped")
        return Tensor(np.zeros(()))
    rp = ad.reshape(ad.take_rows(r, positive), (len(positive), 1))
    rn = ad.reshape(ad.take_rows(r, negative), (1, len(negative)))
    hinge = ad.relu(ad.add(ad.sub(rn, rp), margin))
    return ad.mean(hinge)


def bce_alignment(r: Tensor, positive: list[int], negative: list[int],
                  tau_s: Tensor, cfg: LossConfig, variant: str | None = None) -> Tensor:
    """BCE-family alignment on p = sigmoid(r / tau_s), clamped before logs.

    weighted_bce scales the positive class by |T-|/|T+|; focal applies
    alpha * (1 - p_true)^gamma * (-log p_true) uniformly to both classes."""
    variant = variant or cfg.alignment
    if len(positive) == 0 or len(negative) == 0:
        warnings.warn("empty positive or negative track set; alignment term skipped")
        return Tensor(np.zeros(()))
    n = r.shape[0]
    y = np.zeros(n, dtype=r.data.dtype)
    y[positive] = 1.0
    probs = ad.clip(ad.sigmoid(ad.div(r, tau_s)), PROB_CLAMP, 1.0 - PROB_CLAMP)
    p_true = ad.add(ad.mul(probs, y), ad.mul(ad.sub(1.0, probs), 1.0 - y))
    nll = ad.mul(ad.log(p_true), -1.0)
    if variant == "bce":
        return ad.mean(nll)
    if variant == "weighted_bce":
        w_pos = len(negative) / len(positive)
        weights = np.where(y == 1.0, w_pos, 1.0).astype(r.data.dtype)
        return ad.mean(ad.mul(nll, weights))
    if variant == "focal":
        mod = ad.pow_(ad.sub(1.0, p_true), cfg.focal_gamma)
        return ad.mean(ad.mul(ad.mul(mod, nll), cfg.focal_alpha))
    raise ValueError(f"unknown BCE variant {variant!r}")


def alignment_loss(r: Tensor, positive: list[int], negative: list[int],
                   tau_s: Tensor, cfg: LossConfig) -> Tensor:
    if cfg.alignment == "ranking":
        return ranking_alignment(r, positive, negative, cfg.margin)
    return bce_alignment(r, positive, negative, tau_s, cfg)


def spatial_terms(r: Tensor, positive: list[int], negative: list[int],
                  tau_s: Tensor, cfg: LossConfig) -> dict[str, Tensor]:
    return {
        "diversity": diversity_loss(r, cfg.diversity_floor),
        "sparsity": sparsity_loss(r, cfg.sparsity_coeff),
        "alignment": alignment_loss(r, positive, negative, tau_s, cfg),
    }


def total_loss(global_term: Tensor, diversity: Tensor, sparsity: Tensor,
               alignment: Tensor, spatial_weight: float) -> tuple[Tensor, LossBreakdown]:
    """Blend per the unified objective; returns the scalar graph node and a
    plain-float breakdown for logging."""
    if not (0.0 <= spatial_weight <= 1.0):
        raise ValueError("spatial weight must lie in [0, 1]")
    spatial = ad.add(ad.add(diversity, sparsity), alignment)
    total = ad.add(ad.mul(global_term, 1.0 - spatial_weight),
                   ad.mul(spatial, spatial_weight))
    breakdown = LossBreakdown(
        total=float(total.data), global_loss=float(global_term.data),
        spatial=float(spatial.data), diversity=float(diversity.data),
        sparsity=float(sparsity.data), alignment=float(alignment.data),
    )
    return total, breakdown
