"""Motion-centric video understanding on synthetic point-track corpora.

A numpy library covering the full pipeline: a reverse-mode autodiff tape,
a synthetic trajectory generator with exact ground truth, a deterministic
pseudo text/frame embedder, a trajectory encoder producing language-space
motion descriptors, cross-attention track grounding, query-free expression
discovery against a text bank, the blended contrastive + spatial training
objective, an AdamW/one-cycle trainer, and the metric suite.
"""

__version__ = "0.1.0"
