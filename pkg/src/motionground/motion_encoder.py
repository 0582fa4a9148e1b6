"""Trajectory encoder: per-track motion descriptors in the 512-d text space.

Per track and timestep, a token is assembled from three small MLPs over
normalized position, backward-difference velocity, and the visibility bit,
plus a learned projection of the frame feature. A temporal transformer
(with sinusoidal time encoding) integrates each track's sequence, tokens
are mean-pooled over time, a spatial transformer mixes information across
tracks (no track-index encoding), and a final projection lands on the unit
sphere in text-embedding space.

Tracks are internally re-ordered into a content-canonical order before any
cross-track reduction, which makes permutation equivariance exact at the
bit level, then restored on output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .embeddings import EMBED_DIM
from .layers import (Linear, LayerNorm, MLP, ParamStore, TransformerBlock,
                     sinusoidal_encoding)
from .scenes import TrackSet
from .util import canonical_row_order


@dataclass
class EncoderConfig:
    d_model: int = 256
    heads: int = 16
    temporal_layers: int = 2
    spatial_layers: int = 2
    out_dim: int = EMBED_DIM
    mlp_hidden: int = 64
    ffn_mult: int = 1
    use_velocity: bool = True   # ablation hook: zero out the velocity stream
    # descriptors are normalized, so only the output direction matters; a
    # small projection init lets learned structure dominate quickly
    out_scale: float = 0.1
    # raw per-frame velocity in normalized coordinates is ~1/(T-1) of the
    # position scale; this gain puts the velocity stream on the same O(1)
    # footing as the other token streams
    velocity_gain: float = 25.0
    # sinusoidal rows have norm ~sqrt(d/2); scaled near unit they annotate
    # time without drowning the content streams
    time_scale: float = 0.1

    def validate(self) -> None:
        if self.d_model % self.heads != 0:
            raise ValueError(f"heads ({self.heads}) must divide d_model ({self.d_model})")
        if self.out_dim != EMBED_DIM:
            raise ValueError(f"descriptors must live in the {EMBED_DIM}-d text space")


@dataclass
class MotionDescriptors:
    """Per-track unit vectors; row j corresponds to input track j."""

    descriptors: np.ndarray  # (N, 512)

    @property
    def n_tracks(self) -> int:
        return self.descriptors.shape[0]


class MotionEncoder:
    def __init__(self, store: ParamStore, cfg: EncoderConfig, rng: np.random.RandomState,
                 prefix: str = "mfa"):
        cfg.validate()
        self.cfg = cfg
        d, h = cfg.d_model, cfg.mlp_hidden
        self.pos_mlp = MLP(store, f"{prefix}.pos", [2, h, d], rng)
        self.vel_mlp = MLP(store, f"{prefix}.vel", [2, h, d], rng)
        self.vis_mlp = MLP(store, f"{prefix}.vis", [1, h, d], rng)
        self.frame_proj = Linear(store, f"{prefix}.frame", EMBED_DIM, d, rng)
        self.temporal = [TransformerBlock(store, f"{prefix}.temporal.{i}", d, cfg.heads,
                                          rng, cfg.ffn_mult)
                         for i in range(cfg.temporal_layers)]
        self.spatial = [TransformerBlock(store, f"{prefix}.spatial.{i}", d, cfg.heads,
                                         rng, cfg.ffn_mult)
                        for i in range(cfg.spatial_layers)]
        self.final_ln = LayerNorm(store, f"{prefix}.final_ln", d)
        self.out_proj = Linear(store, f"{prefix}.out", d, cfg.out_dim, rng,
                               init="gauss", sigma=cfg.out_scale / np.sqrt(d))

    def forward_batch(self, positions: np.ndarray, visibility: np.ndarray,
                      frames, canvas: tuple[float, float]) -> Tensor:
        """positions (B, N, T, 2), visibility (B, N, T), frames (B, T, 512)
        or Tensor; returns descriptors (B, N, 512) with unit rows."""
        if positions.ndim != 4:
            raise ValueError(f"expected (B, N, T, 2) positions, got {positions.shape}")
        B, N, T, _ = positions.shape
        if N == 0:
            raise ValueError("scene has no tracks")
        frames_data = frames.data if isinstance(frames, Tensor) else np.asarray(frames)
        if frames_data.shape[:2] != (B, T):
            raise ValueError(
                f"frame features {frames_data.shape} disagree with tracks (B={B}, T={T})"
            )
        dtype = ad.default_dtype()
        W, H = canvas

        # content-canonical track order per scene (exact permutation equivariance)
        restore = np.empty(B * N, dtype=np.intp)
        pos_sorted = np.empty_like(positions)
        vis_sorted = np.empty_like(visibility)
        for b in range(B):
            order = canonical_row_order(positions[b], visibility[b])
            pos_sorted[b] = positions[b, order]
            vis_sorted[b] = visibility[b, order]
            restore[b * N + np.asarray(order)] = b * N + np.arange(N)

        norm = np.asarray([W, H], dtype=dtype)
        p_hat = (pos_sorted / norm).astype(dtype)
        v_hat = np.zeros_like(p_hat)
        v_hat[:, :, 1:, :] = p_hat[:, :, 1:, :] - p_hat[:, :, :-1, :]
        v_hat *= self.cfg.velocity_gain
        vis_bit = vis_sorted.astype(dtype)[..., None]

        tok = self.pos_mlp(Tensor(p_hat.reshape(-1, 2)))
        if self.cfg.use_velocity:
            tok = ad.add(tok, self.vel_mlp(Tensor(v_hat.reshape(-1, 2))))
        tok = ad.add(tok, self.vis_mlp(Tensor(vis_bit.reshape(-1, 1))))
        tok = ad.reshape(tok, (B, N, T, self.cfg.d_model))

        frame_tok = self.frame_proj(frames if isinstance(frames, Tensor)
                                    else Tensor(frames_data.astype(dtype)))
        tok = ad.add(tok, ad.reshape(frame_tok, (B, 1, T, self.cfg.d_model)))

        x = ad.reshape(tok, (B * N, T, self.cfg.d_model))
        if self.temporal:
            time_enc = (self.cfg.time_scale *
                        sinusoidal_encoding(T, self.cfg.d_model)).astype(dtype)
            x = ad.add(x, Tensor(time_enc))
            for block in self.temporal:
                x = block(x)
        x = ad.mean(x, axis=1)  # (B*N, d)

        x = ad.reshape(x, (B, N, self.cfg.d_model))
        for block in self.spatial:
            x = block(x)

        out = self.out_proj(self.final_ln(x))
        out = ad.l2_normalize_rows(out)
        return ad.take_rows(ad.reshape(out, (B * N, self.cfg.out_dim)), restore)


def encode_tracks(encoder: MotionEncoder, tracks: TrackSet, frames: np.ndarray,
                  canvas: tuple[float, float]) -> MotionDescriptors:
    """Single-scene encode, returning plain arrays."""
    if frames.shape[0] != tracks.n_frames:
        raise ValueError(
            f"tracks have T={tracks.n_frames} but frame features have T={frames.shape[0]}"
        )
    with ad.no_grad():
        out = encoder.forward_batch(tracks.positions[None], tracks.visibility[None],
                                    frames[None], canvas)
    return MotionDescriptors(descriptors=out.data.copy())


def pooled_summary_graph(descriptors: Tensor) -> Tensor:
    """Mean of descriptor rows in content-canonical order, re-normalized.

    The canonical summation order makes the pool invariant to the caller's
    row permutation bit-for-bit."""
    order = canonical_row_order(descriptors.data)
    n = descriptors.shape[0]
    pooled = ad.mul(ad.sum_(ad.take_rows(descriptors, order), axis=0), 1.0 / n)
    try:
        return ad.l2_normalize_rows(pooled)
    except ad.NumericsError:
        raise ad.NumericsError("degenerate zero-norm pool of motion descriptors") from None


def pooled_motion_summary(descriptors: MotionDescriptors | np.ndarray) -> np.ndarray:
    arr = descriptors.descriptors if isinstance(descriptors, MotionDescriptors) else descriptors
    if arr.shape[0] < 1:
        raise ValueError("cannot pool an empty descriptor set")
    with ad.no_grad():
        return pooled_summary_graph(Tensor(arr)).data.copy()
