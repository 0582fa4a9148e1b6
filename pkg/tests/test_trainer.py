"""Schedule, optimizer, determinism, and checkpoint-resume behavior."""

import csv
import math
import os

import numpy as np
import pytest

from motionground import autodiff as ad
from motionground.embeddings import bank_for_corpus
from motionground.losses import LossConfig
from motionground.model import ModelConfig, Pipeline
from motionground.motion_encoder import EncoderConfig
from motionground.scenes import CorpusConfig, build_corpus
from motionground.trainer import (AdamW, FeatureConfig, TrainConfig, TrainError,
                                  Trainer, one_cycle_lr)

TINY_MODEL = ModelConfig(encoder=EncoderConfig(d_model=16, heads=2, temporal_layers=1,
                                               spatial_layers=1, mlp_hidden=8))
TINY_CORPUS = CorpusConfig(count=12, seed=21, T=6, grid_rows=3, grid_cols=3,
                           second_agent_prob=0.3)


@pytest.fixture(scope="module")
def tiny_setup():
    corpus = build_corpus(TINY_CORPUS)
    bank = bank_for_corpus(corpus, distractor_ratio=1.0)
    return corpus, bank


def make_trainer(corpus, bank, **overrides):
    defaults = dict(epochs=2, batch_size=4, seed=3, dtype="float32")
    defaults.update(overrides)
    cfg = TrainConfig(**defaults)
    ad.set_default_dtype(cfg.np_dtype)
    try:
        pipe = Pipeline(TINY_MODEL)
        return Trainer(pipe, corpus, bank, cfg, LossConfig())
    finally:
        ad.set_default_dtype(np.float64)


class TestOneCycle:
    def test_step_zero_is_peak_over_div(self):
        assert one_cycle_lr(0, 100, 1e-4) == pytest.approx(1e-4 / 25)

    def test_warmup_end_is_exactly_peak(self):
        assert one_cycle_lr(30, 100, 1e-4, warmup_frac=0.3) == 1e-4

    def test_final_step_returns_to_floor(self):
        assert one_cycle_lr(100, 100, 1e-4) == pytest.approx(1e-4 / 25)

    def test_monotone_up_then_down(self):
        values = [one_cycle_lr(s, 100, 1e-4) for s in range(101)]
        peak = int(np.argmax(values))
        assert peak == 30
        assert all(a <= b + 1e-18 for a, b in zip(values[:peak], values[1:peak + 1]))
        assert all(a >= b - 1e-18 for a, b in zip(values[peak:-1], values[peak + 1:]))

    def test_step_beyond_total_rejected(self):
        with pytest.raises(ValueError):
            one_cycle_lr(101, 100, 1e-4)


class TestAdamW:
    def test_first_step_moves_by_lr(self):
        from motionground.layers import ParamStore

        store = ParamStore()
        p = store.register("w.w", np.ones((2, 2)))
        p.grad = np.full((2, 2), 0.5)
        opt = AdamW(store, weight_decay=0.0)
        opt.step(1e-3)
        # bias-corrected first Adam step is lr * g / (|g| + eps)
        assert np.allclose(p.data, 1.0 - 1e-3, atol=1e-6)

    def test_decoupled_decay_only_on_matrices(self):
        from motionground.layers import ParamStore

        store = ParamStore()
        w = store.register("w.w", np.ones((2, 2)))
        b = store.register("w.b", np.ones(2))
        opt = AdamW(store, weight_decay=0.1)
        w.grad = np.zeros((2, 2))
        b.grad = np.zeros(2)
        opt.step(1e-2)
        assert np.allclose(w.data, 1.0 - 1e-2 * 0.1 * 1.0)
        assert np.allclose(b.data, 1.0)


class TestTraining:
    def test_loss_decreases_on_tiny_corpus(self, tiny_setup):
        corpus, bank = tiny_setup
        trainer = make_trainer(corpus, bank, epochs=6)
        breakdowns = trainer.run_steps(trainer.total_steps)
        first = np.mean([b.total for b in breakdowns[:3]])
        last = np.mean([b.total for b in breakdowns[-3:]])
        assert last < first

    def test_lambda_zero_leaves_grounding_parameters_without_gradient(self, tiny_setup):
        corpus, bank = tiny_setup
        ad.set_default_dtype(np.float32)
        try:
            pipe = Pipeline(TINY_MODEL)
            trainer = Trainer(pipe, corpus, bank, TrainConfig(epochs=1, batch_size=4),
                              LossConfig(spatial_weight=0.0))
            batch = trainer.steps_for_global_step(0)
            total, _ = trainer.loss_graph(batch)
            pipe.store.zero_grad()
            ad.backward(total)
            for name, p in pipe.store.items():
                grad_norm = float(np.abs(pipe.store.grad(name)).max())
                if name.startswith("grounding."):
                    assert grad_norm == 0.0, name
            assert float(np.abs(pipe.store.grad("discovery.head.w")).max()) > 0
        finally:
            ad.set_default_dtype(np.float64)

    def test_single_use_audit_holds_during_training(self, tiny_setup):
        corpus, bank = tiny_setup
        trainer = make_trainer(corpus, bank)
        total, _ = trainer.loss_graph(trainer.steps_for_global_step(0))
        trainer.pipe.store.audit_single_use(total)

    def test_missing_bank_expression_rejected(self, tiny_setup):
        corpus, _ = tiny_setup
        from motionground.embeddings import build_text_bank

        bad_bank = build_text_bank(["something unrelated"])
        ad.set_default_dtype(np.float32)
        try:
            with pytest.raises(KeyError):
                Trainer(Pipeline(TINY_MODEL), corpus, bad_bank,
                        TrainConfig(epochs=1), LossConfig())
        finally:
            ad.set_default_dtype(np.float64)

    def test_nan_loss_aborts_with_diagnostics(self, tiny_setup):
        corpus, bank = tiny_setup
        trainer = make_trainer(corpus, bank)
        trainer.pipe.store["discovery.head.w"].data *= np.float32(np.nan)
        with pytest.raises(TrainError, match="step 0"):
            trainer.run_steps(1)

    def test_dtype_mismatch_rejected(self, tiny_setup):
        corpus, bank = tiny_setup
        pipe = Pipeline(TINY_MODEL)  # built under float64
        with pytest.raises(TrainError, match="float32"):
            Trainer(pipe, corpus, bank, TrainConfig(epochs=1, dtype="float32"),
                    LossConfig())


class TestDeterminismAndResume:
    def run_once(self, corpus, bank, tmp_path, tag, steps=6):
        trainer = make_trainer(corpus, bank, epochs=3, batch_size=4)
        trainer.run_steps(steps)
        path = trainer.save_checkpoint(str(tmp_path / tag))
        trainer.write_log(str(tmp_path / f"{tag}.csv"))
        return trainer, path

    def test_two_runs_are_byte_identical(self, tiny_setup, tmp_path):
        corpus, bank = tiny_setup
        _, p1 = self.run_once(corpus, bank, tmp_path, "a")
        _, p2 = self.run_once(corpus, bank, tmp_path, "b")
        assert open(p1 + ".f32", "rb").read() == open(p2 + ".f32", "rb").read()
        assert open(tmp_path / "a.csv").read() == open(tmp_path / "b.csv").read()

    def test_resume_matches_uninterrupted(self, tiny_setup, tmp_path):
        corpus, bank = tiny_setup
        trainer, path = self.run_once(corpus, bank, tmp_path, "base", steps=4)
        trainer.run_steps(1)  # uninterrupted step 5
        resumed = Trainer.resume(path, corpus, bank)
        assert resumed.global_step == 4
        resumed.run_steps(1)
        for name, p in trainer.pipe.store.items():
            a = p.data.astype(np.float64)
            b = resumed.pipe.store[name].data.astype(np.float64)
            denom = np.maximum(np.abs(a), 1e-8)
            assert np.max(np.abs(a - b) / denom) <= 1e-6, name

    def test_resume_rejects_wrong_corpus(self, tiny_setup, tmp_path):
        corpus, bank = tiny_setup
        _, path = self.run_once(corpus, bank, tmp_path, "c", steps=2)
        other = build_corpus(CorpusConfig(count=12, seed=99, T=6, grid_rows=3,
                                          grid_cols=3, second_agent_prob=0.3))
        other_bank = bank_for_corpus(other, distractor_ratio=1.0)
        with pytest.raises(TrainError, match="different"):
            Trainer.resume(path, other, other_bank)

    def test_full_run_writes_log_and_checkpoints(self, tiny_setup, tmp_path):
        corpus, bank = tiny_setup
        trainer = make_trainer(corpus, bank, epochs=2)
        result = trainer.run(out_dir=str(tmp_path / "run"), quiet=True)
        assert result.best_epoch >= 0
        assert os.path.exists(result.best_checkpoint + ".f32")
        assert os.path.exists(result.final_checkpoint + ".f32")
        with open(result.log_path) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == trainer.total_steps
        assert set(rows[0]) == {"step", "lr", "total", "global", "spatial",
                                "diversity", "sparsity", "alignment"}
        lrs = [float(r["lr"]) for r in rows]
        assert math.isclose(max(lrs), 1e-4, rel_tol=0.2)
