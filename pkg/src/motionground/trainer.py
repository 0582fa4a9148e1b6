"""End-to-end optimization: decoupled-weight-decay Adam, a one-cycle
learning-rate schedule, unified single-graph batch steps, per-epoch
validation with best-checkpoint retention, and a CSV training log."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from . import losses as losses_mod
from .autodiff import Tensor
from .embeddings import TextBank, frame_feature_matrix, positive_indices
from .losses import LossConfig
from .model import ModelConfig, Pipeline
from .scenes import Corpus, Scene, _scene_record
from .util import stable_rng


class TrainError(RuntimeError):
    pass


@dataclass
class FeatureConfig:
    noise_sigma: float = 0.1
    background_weight: float = 0.12


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 8
    peak_lr: float = 1e-4
    weight_decay: float = 0.01
    warmup_frac: float = 0.3
    lr_div: float = 25.0      # start/end lr = peak / lr_div
    clip_norm: float = 1.0
    seed: int = 0
    dtype: str = "float32"    # float64 for gradient-check experiments
    # per-op finiteness probes off in the hot loop; the loss and gradient
    # norm are still checked every step, so NaNs abort either way
    strict_numerics: bool = False

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if not (0.0 <= self.warmup_frac < 1.0):
            raise ValueError("warmup fraction must lie in [0, 1)")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


def one_cycle_lr(step: int, total_steps: int, peak: float,
                 warmup_frac: float = 0.3, div: float = 25.0) -> float:
    """Linear warmup from peak/div to peak, then cosine decay back to
    peak/div. Defined on completed-step counts 0..total_steps inclusive."""
    if step < 0 or step > total_steps:
        raise ValueError(f"step {step} outside schedule of {total_steps} steps")
    floor = peak / div
    warmup = int(round(warmup_frac * total_steps))
    if step <= warmup:
        if warmup == 0:
            return peak
        return floor + (peak - floor) * (step / warmup)
    span = total_steps - warmup
    progress = (step - warmup) / span
    return floor + (peak - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Adam with decoupled weight decay. Decay applies to weight matrices
    only (bias vectors, layer-norm gains, and scalars are exempt)."""

    def __init__(self, store, weight_decay: float = 0.01,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.store = store
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in store.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in store.items()}

    @staticmethod
    def _decays(name: str, param) -> bool:
        return param.data.ndim >= 2

    def step(self, lr: float) -> None:
        b1, b2 = self.betas
        self.t += 1
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.store.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay and self._decays(name, p):
                update = update + self.weight_decay * p.data
            p.data = p.data - p.data.dtype.type(lr) * update.astype(p.data.dtype)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.store.names():
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state(self, arrays: dict[str, np.ndarray], t: int) -> None:
        self.t = t
        for name in self.store.names():
            self.m[name] = np.array(arrays[f"adam.m.{name}"],
                                    dtype=self.m[name].dtype)
            self.v[name] = np.array(arrays[f"adam.v.{name}"],
                                    dtype=self.v[name].dtype)


def clip_global_norm(store, max_norm: float) -> float:
    total = 0.0
    for name, p in store.items():
        if p.grad is not None:
            total += float(np.dot(p.grad.reshape(-1), p.grad.reshape(-1)))
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for name, p in store.items():
            if p.grad is not None:
                p.grad *= p.grad.dtype.type(scale)
    return norm


def corpus_content_hash(corpus: Corpus) -> str:
    h = hashlib.sha256()
    for scene in corpus.scenes:
        h.update(json.dumps(_scene_record(scene), sort_keys=True,
                            separators=(",", ":")).encode())
    return h.hexdigest()


def bank_content_hash(bank: TextBank) -> str:
    h = hashlib.sha256()
    h.update("\n".join(bank.expressions).encode())
    h.update(np.ascontiguousarray(bank.embeddings, dtype="<f4").tobytes())
    return h.hexdigest()


def batch_loss(pipe: Pipeline, batch: list[Scene], frames_by_index: dict,
               positives_by_index: dict, bank: TextBank, bank_emb: np.ndarray,
               loss_cfg: LossConfig) -> tuple[Tensor, "losses_mod.LossBreakdown"]:
    """The unified objective over one stacked batch of scenes: one forward
    graph producing the contrastive global term plus per-expression spatial
    terms, blended by the spatial weight."""
    positions = np.stack([s.tracks.positions for s in batch])
    visibility = np.stack([s.tracks.visibility for s in batch])
    frames = np.stack([frames_by_index[s.index] for s in batch])
    canvas = (batch[0].spec.W, batch[0].spec.H)
    for s in batch:
        if (s.spec.W, s.spec.H) != canvas:
            raise TrainError("scenes in one batch must share canvas extents")

    fw = pipe.forward_batch(positions, visibility, frames, canvas, bank)
    positives = [positives_by_index[s.index] for s in batch]
    global_term = losses_mod.global_infonce(
        fw.sims, positives, loss_cfg.temperature,
        in_batch=loss_cfg.in_batch_negatives)

    pair_refs = []
    expr_rows = []
    for b, scene in enumerate(batch):
        for gt, bank_idx in zip(scene.ground_truth, positives[b]):
            pair_refs.append((b, gt))
            expr_rows.append(bank_emb[bank_idx])
    q = pipe.grounding.project_text(np.stack(expr_rows))
    k = pipe.grounding.project_descriptors(fw.descriptors)
    combined, _ = pipe.grounding.scores_graph(q, k)
    tau_s = pipe.grounding.tau()

    n = fw.n_tracks
    terms: dict[str, list[Tensor]] = {"diversity": [], "sparsity": [], "alignment": []}
    for e, (b, gt) in enumerate(pair_refs):
        cols = np.arange(b * n, (b + 1) * n)
        row = ad.reshape(ad.take_columns(ad.take_rows(combined, [e]), cols), (n,))
        for key, value in losses_mod.spatial_terms(
                row, gt.positive_tracks, gt.negative_tracks, tau_s, loss_cfg).items():
            terms[key].append(value)
    diversity = ad.mean(ad.stack(terms["diversity"]))
    sparsity = ad.mean(ad.stack(terms["sparsity"]))
    alignment = ad.mean(ad.stack(terms["alignment"]))
    return losses_mod.total_loss(global_term, diversity, sparsity, alignment,
                                 loss_cfg.spatial_weight)


@dataclass
class TrainResult:
    best_val_j: float
    best_epoch: int
    history: list[dict] = field(default_factory=list)
    best_checkpoint: str | None = None
    final_checkpoint: str | None = None
    log_path: str | None = None


class Trainer:
    def __init__(self, pipeline: Pipeline, corpus: Corpus, bank: TextBank,
                 train_cfg: TrainConfig, loss_cfg: LossConfig,
                 feature_cfg: FeatureConfig | None = None):
        train_cfg.validate()
        loss_cfg.validate()
        self.pipe = pipeline
        self.corpus = corpus
        self.bank = bank
        self.cfg = train_cfg
        self.loss_cfg = loss_cfg
        self.feature_cfg = feature_cfg or FeatureConfig()
        self.dtype = train_cfg.np_dtype

        for name, p in pipeline.store.items():
            if p.data.dtype != self.dtype:
                raise TrainError(
                    f"parameter {name} is {p.data.dtype}; build the pipeline under "
                    f"the {train_cfg.dtype} default dtype"
                )

        self.train_scenes = corpus.split("train")
        self.val_scenes = corpus.split("val")
        if not self.train_scenes or not self.val_scenes:
            raise TrainError("corpus needs non-empty train and val splits")

        # the bank must cover every corpus expression (raises KeyError otherwise)
        self.positives = {s.index: positive_indices(bank, s) for s in corpus.scenes}

        self.frames: dict[int, np.ndarray] = {}
        for scene in corpus.scenes:
            self.frames[scene.index] = frame_feature_matrix(
                scene.spec, self.feature_cfg.noise_sigma,
                self.feature_cfg.background_weight).astype(self.dtype)

        self.steps_per_epoch = math.ceil(len(self.train_scenes) / train_cfg.batch_size)
        self.total_steps = train_cfg.epochs * self.steps_per_epoch
        self.optimizer = AdamW(pipeline.store, weight_decay=train_cfg.weight_decay)
        self.global_step = 0
        self.log_rows: list[dict] = []
        self.corpus_hash = corpus_content_hash(corpus)
        self.bank_hash = bank_content_hash(bank)
        self._bank_emb = bank.embeddings.astype(self.dtype)

    # -- one optimizer step over a batch of scenes --------------------------

    def batch_for_epoch(self, epoch: int) -> list[list[Scene]]:
        order = stable_rng(self.cfg.seed, 0xBA7C4, epoch).permutation(len(self.train_scenes))
        scenes = [self.train_scenes[i] for i in order]
        bs = self.cfg.batch_size
        return [scenes[i: i + bs] for i in range(0, len(scenes), bs)]

    def loss_graph(self, batch: list[Scene]) -> tuple[Tensor, losses_mod.LossBreakdown]:
        return batch_loss(self.pipe, batch, self.frames, self.positives,
                          self.bank, self._bank_emb, self.loss_cfg)

    def step_batch(self, batch: list[Scene]) -> losses_mod.LossBreakdown:
        with ad.dtype_context(self.dtype):
            return self._step_batch(batch)

    def _step_batch(self, batch: list[Scene]) -> losses_mod.LossBreakdown:
        lr = one_cycle_lr(self.global_step, self.total_steps, self.cfg.peak_lr,
                          self.cfg.warmup_frac, self.cfg.lr_div)
        saved_check = ad.CHECK_FINITE
        ad.CHECK_FINITE = self.cfg.strict_numerics and saved_check
        try:
            total, breakdown = self.loss_graph(batch)
            if not math.isfinite(breakdown.total):
                raise ad.NumericsError(f"loss is not finite: {breakdown.total}")
            self.pipe.store.audit_single_use(total)
            self.pipe.store.zero_grad()
            ad.backward(total)
        except ad.NumericsError as err:
            raise TrainError(
                f"aborting at step {self.global_step} (lr={lr:.3e}): {err}"
            ) from err
        finally:
            ad.CHECK_FINITE = saved_check
        norm = clip_global_norm(self.pipe.store, self.cfg.clip_norm)
        if not math.isfinite(norm):
            raise TrainError(
                f"aborting at step {self.global_step} (lr={lr:.3e}): gradient norm is {norm}"
            )
        self.optimizer.step(lr)
        self.global_step += 1
        row = {"step": self.global_step, "lr": lr}
        row.update(breakdown.as_row())
        self.log_rows.append(row)
        return breakdown

    # -- validation ----------------------------------------------------------

    def validate(self) -> dict:
        from .evaluate import grounding_scores, retrieval_sims
        from .grounding import calibrate_threshold, jaccard
        from .metrics import retrieval_metrics

        with ad.dtype_context(self.dtype):
            return self._validate()

    def _validate(self) -> dict:
        from .evaluate import grounding_scores, retrieval_sims
        from .grounding import calibrate_threshold, jaccard
        from .metrics import retrieval_metrics

        sims, positives = retrieval_sims(self.pipe, self.val_scenes, self.frames,
                                         self.bank)
        retrieval = retrieval_metrics(sims, positives, ks=(1,))
        scores, pos_lists = grounding_scores(self.pipe, self.val_scenes, self.frames,
                                             self.bank)
        threshold = calibrate_threshold(scores, pos_lists)
        js = [jaccard(s >= threshold, p) for s, p in zip(scores, pos_lists)]
        return {"val_v2t_r1": retrieval["v2t_r1"],
                "val_mean_j": float(np.mean(js)),
                "val_threshold": threshold}

    # -- full run ------------------------------------------------------------

    def run(self, out_dir: str | None = None, quiet: bool = False) -> TrainResult:
        best_j, best_epoch = -1.0, -1
        best_path = final_path = log_path = None
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
        history = []
        for epoch in range(self.cfg.epochs):
            for batch in self.batch_for_epoch(epoch):
                self.step_batch(batch)
            stats = self.validate()
            stats["epoch"] = epoch
            stats["train_total"] = float(np.mean(
                [r["total"] for r in self.log_rows[-self.steps_per_epoch:]]))
            history.append(stats)
            if not quiet:
                print(f"epoch {epoch}: loss={stats['train_total']:.4f} "
                      f"val_j={stats['val_mean_j']:.3f} val_r1={stats['val_v2t_r1']:.3f}",
                      flush=True)
            if stats["val_mean_j"] > best_j:
                best_j, best_epoch = stats["val_mean_j"], epoch
                if out_dir:
                    best_path = self.save_checkpoint(
                        os.path.join(out_dir, "best"),
                        {"epoch": epoch, "val_mean_j": best_j,
                         "val_threshold": history[-1]["val_threshold"]})
        if out_dir:
            final_path = self.save_checkpoint(
                os.path.join(out_dir, "final"),
                {"epoch": self.cfg.epochs - 1,
                 "val_threshold": history[-1]["val_threshold"]})
            log_path = os.path.join(out_dir, "training_log.csv")
            self.write_log(log_path)
        return TrainResult(best_val_j=best_j, best_epoch=best_epoch, history=history,
                           best_checkpoint=best_path, final_checkpoint=final_path,
                           log_path=log_path)

    def write_log(self, path: str) -> None:
        fields = ["step", "lr", "total", "global", "spatial", "diversity",
                  "sparsity", "alignment"]
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=fields)
        writer.writeheader()
        writer.writerows(self.log_rows)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(buf.getvalue())

    # -- persistence -----------------------------------------------------------

    def snapshot_config(self) -> dict:
        return {
            "train": asdict(self.cfg),
            "loss": asdict(self.loss_cfg),
            "features": asdict(self.feature_cfg),
        }

    def save_checkpoint(self, path: str, extra: dict | None = None) -> str:
        arrays = self.pipe.store.values_dict()
        arrays.update(self.optimizer.state_arrays())
        payload = {
            "step": self.global_step,
            "adam_t": self.optimizer.t,
            "config": self.snapshot_config(),
            "corpus_hash": self.corpus_hash,
            "bank_hash": self.bank_hash,
        }
        if extra:
            payload.update(extra)
        payload["model_config"] = self.pipe.cfg.as_dict()
        return ckpt.save_arrays(path, arrays, extra=payload)

    @classmethod
    def resume(cls, path: str, corpus: Corpus, bank: TextBank) -> "Trainer":
        arrays, extra = ckpt.load_arrays(path)
        cfg = extra["config"]
        train_cfg = TrainConfig(**cfg["train"])
        ad.set_default_dtype(train_cfg.np_dtype)
        pipe = Pipeline(ModelConfig.from_dict(extra["model_config"]))
        pipe.store.load_values({k: v for k, v in arrays.items()
                                if not k.startswith("adam.")})
        trainer = cls(pipe, corpus, bank, train_cfg, LossConfig(**cfg["loss"]),
                      FeatureConfig(**cfg["features"]))
        trainer.optimizer.load_state(arrays, extra["adam_t"])
        trainer.global_step = extra["step"]
        if extra["corpus_hash"] != trainer.corpus_hash:
            raise TrainError("checkpoint was trained on a different corpus")
        if extra["bank_hash"] != trainer.bank_hash:
            raise TrainError("checkpoint was trained on a different bank")
        return trainer

    def steps_for_global_step(self, step: int) -> list[Scene]:
        """The deterministic batch that step index `step` trains on."""
        epoch, offset = divmod(step, self.steps_per_epoch)
        return self.batch_for_epoch(epoch)[offset]

    def run_steps(self, n: int) -> list[losses_mod.LossBreakdown]:
        """Advance exactly n optimizer steps from the current position."""
        out = []
        for _ in range(n):
            batch = self.steps_for_global_step(self.global_step)
            out.append(self.step_batch(batch))
        return out
