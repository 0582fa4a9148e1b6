"""Pipeline assembly: one parameter store holding the trajectory encoder,
grounding heads, and discovery head, with batched training forwards,
no-grad inference helpers, and checkpoint (de)serialization."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from .autodiff import Tensor
from .discovery import DiscoveryConfig, DiscoveryHead, mean_frame_feature
from .embeddings import TextBank
from .grounding import GroundingConfig, GroundingHead
from .layers import ParamStore
from .motion_encoder import EncoderConfig, MotionEncoder, pooled_summary_graph
from .scenes import Scene
from .util import stable_rng


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    grounding: GroundingConfig = field(default_factory=GroundingConfig)
    discovery: DiscoveryConfig = field(default_factory=DiscoveryConfig)
    init_seed: int = 0

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            encoder=EncoderConfig(**d["encoder"]),
            grounding=GroundingConfig(**d["grounding"]),
            discovery=DiscoveryConfig(**d["discovery"]),
            init_seed=d["init_seed"],
        )


@dataclass
class BatchForward:
    """Graph handles produced by one unified training forward."""

    descriptors: Tensor        # (B*N, 512)
    pooled: Tensor             # (B, 512)
    e_video: Tensor            # (B, 512)
    sims: Tensor               # (B, bank size)
    n_tracks: int


class Pipeline:
    def __init__(self, cfg: ModelConfig):
        cfg.encoder.validate()
        cfg.grounding.validate()
        self.cfg = cfg
        self.store = ParamStore()
        rng = stable_rng(cfg.init_seed, 0x0DE1)
        self.encoder = MotionEncoder(self.store, cfg.encoder, rng)
        self.grounding = GroundingHead(self.store, cfg.grounding, rng)
        self.discovery = DiscoveryHead(self.store, cfg.discovery, rng)

    # -- training forward -------------------------------------------------

    def forward_batch(self, positions: np.ndarray, visibility: np.ndarray,
                      frames: np.ndarray, canvas: tuple[float, float],
                      bank: TextBank) -> BatchForward:
        """One unified forward over a stacked batch of scenes. Every
        parameter is consumed exactly once (auditable on the loss graph)."""
        B, N = positions.shape[0], positions.shape[1]
        desc = self.encoder.forward_batch(positions, visibility, frames, canvas)
        pooled_rows = []
        for b in range(B):
            rows = ad.take_rows(desc, np.arange(b * N, (b + 1) * N))
            pooled_rows.append(ad.reshape(pooled_summary_graph(rows), (-1,)))
        pooled = ad.stack(pooled_rows)
        fmean = np.stack([mean_frame_feature(frames[b]) for b in range(B)])
        fmean = fmean.astype(ad.default_dtype())
        e_video = self.discovery.video_embedding_graph(
            Tensor(fmean), pooled if self.cfg.discovery.motion_alpha != 0.0 else None)
        bank_t = Tensor(bank.embeddings.T.astype(ad.default_dtype()))
        sims = ad.matmul(e_video, bank_t)
        return BatchForward(descriptors=desc, pooled=pooled, e_video=e_video,
                            sims=sims, n_tracks=N)

    # -- inference helpers -------------------------------------------------

    def scene_inputs(self, scene: Scene) -> tuple[np.ndarray, np.ndarray, tuple[float, float]]:
        return scene.tracks.positions, scene.tracks.visibility, (scene.spec.W, scene.spec.H)

    def descriptors_for(self, scene: Scene, frames: np.ndarray) -> np.ndarray:
        positions, visibility, canvas = self.scene_inputs(scene)
        with ad.no_grad():
            out = self.encoder.forward_batch(positions[None], visibility[None],
                                             frames[None], canvas)
        return out.data.copy()

    def video_embedding_for(self, scene: Scene, frames: np.ndarray,
                            descriptors: np.ndarray | None = None) -> np.ndarray:
        if descriptors is None and self.cfg.discovery.motion_alpha != 0.0:
            descriptors = self.descriptors_for(scene, frames)
        fmean = mean_frame_feature(frames).astype(ad.default_dtype())
        with ad.no_grad():
            pooled = None
            if self.cfg.discovery.motion_alpha != 0.0:
                pooled = pooled_summary_graph(Tensor(descriptors))
            out = self.discovery.video_embedding_graph(Tensor(fmean[None, :]), pooled)
        return out.data[0].copy()

    def relevance_for(self, descriptors: np.ndarray, text_emb: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            q = self.grounding.project_text(np.asarray(text_emb)[None, :])
            k = self.grounding.project_descriptors(descriptors)
            combined, _ = self.grounding.scores_graph(q, k)
        return combined.data[0].copy()

    # -- persistence -------------------------------------------------------

    def save(self, path: str, extra: dict | None = None) -> str:
        payload = dict(extra or {})
        payload["model_config"] = self.cfg.as_dict()
        return ckpt.save_arrays(path, self.store.values_dict(), extra=payload)

    @classmethod
    def load(cls, path: str) -> tuple["Pipeline", dict]:
        arrays, extra = ckpt.load_arrays(path)
        cfg = ModelConfig.from_dict(extra["model_config"])
        pipe = cls(cfg)
        params = {k: v for k, v in arrays.items() if k in pipe.store}
        pipe.store.load_values(params)
        return pipe, extra
