"""End-to-end on a pocket-sized setup: generate a corpus, train briefly,
then discover and ground expressions on a held-out scene.

Runs in about two minutes on one core. The acceptance-scale run (200
scenes, 144 tracks, 24 frames) lives in tests/test_acceptance.py; this is
the same pipeline with every knob turned down.
"""

import numpy as np

from motionground import autodiff as ad

ad.set_default_dtype(np.float32)

from motionground.discovery import select_expressions  # noqa: E402
from motionground.embeddings import bank_for_corpus, frame_feature_matrix  # noqa: E402
from motionground.evaluate import evaluate  # noqa: E402
from motionground.losses import LossConfig  # noqa: E402
from motionground.model import ModelConfig, Pipeline  # noqa: E402
from motionground.motion_encoder import EncoderConfig  # noqa: E402
from motionground.scenes import CorpusConfig, build_corpus  # noqa: E402
from motionground.trainer import TrainConfig, Trainer  # noqa: E402

corpus = build_corpus(CorpusConfig(count=60, seed=13, T=12, grid_rows=8, grid_cols=8))
bank = bank_for_corpus(corpus, distractor_ratio=2.0)
print(f"corpus: {len(corpus.scenes)} scenes, bank of {bank.size} expressions")

model_cfg = ModelConfig(encoder=EncoderConfig(d_model=64, heads=8, temporal_layers=1,
                                              spatial_layers=1))
pipe = Pipeline(model_cfg)
trainer = Trainer(pipe, corpus, bank, TrainConfig(epochs=10, batch_size=8, seed=1),
                  LossConfig())
result = trainer.run(quiet=False)
print(f"best val J {result.best_val_j:.3f} at epoch {result.best_epoch}")

report = evaluate(pipe, corpus, bank, split="test")
print(f"\ntest split: V2T R@1={report.v2t_r1:.2f} J={report.mean_j:.2f} "
      f"F={report.mean_f:.2f} coverage={report.coverage:.2f} "
      f"precision={report.precision:.2f}")

# query-free discovery on one held-out scene
scene = corpus.split("test")[0]
frames = frame_feature_matrix(scene.spec)
e_video = pipe.video_embedding_for(scene, frames)
sims = bank.embeddings @ e_video
found = select_expressions(sims, bank, "adaptive")
print(f"\nscene {scene.index} truly contains: "
      f"{[gt.expression for gt in scene.ground_truth]}")
print("discovered (adaptive cut):")
for k, expr, sim in found.entries:
    print(f"  {sim:+.3f}  {expr}")

# ground the top discovery to tracks
desc = pipe.descriptors_for(scene, frames)
top_expr = found.entries[0][1]
scores = pipe.relevance_for(desc, bank.embeddings[bank.index_of(top_expr)])
selected = np.flatnonzero(scores >= report.track_threshold)
truth = next((set(gt.positive_tracks) for gt in scene.ground_truth
              if gt.expression == top_expr), set())
print(f"\ngrounding {top_expr!r}: {len(selected)} tracks selected, "
      f"{len(set(selected.tolist()) & truth)} of {len(truth)} true tracks hit")
