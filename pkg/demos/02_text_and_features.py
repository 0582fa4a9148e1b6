"""The deterministic pseudo vision-language space.

Text embeds as a normalized bag of hashed token vectors, so word order is
provably irrelevant and everything is bit-reproducible. Frame features mix
each agent's expression embedding (weighted by area) with a background
direction and noise, so pooling frames provably carries a recoverable trace
of the right expressions.
"""

import numpy as np

from motionground.embeddings import (build_text_bank, embed_text,
                                     frame_feature_matrix)
from motionground.scenes import CorpusConfig, build_corpus
from motionground.util import cosine

a = embed_text("panda falling")
b = embed_text("falling panda")
print("order invariance, cosine:", cosine(a, b))          # exactly 1.0

left = embed_text("bear moving to the left")
right = embed_text("bear moving to the right")
print("left vs right cosine: %.4f (shared tokens keep them close)" % cosine(left, right))
print("unrelated cosine: %.4f" % cosine(left, embed_text("raft staying still")))

# banks deduplicate, sort, and tag expressions
bank = build_text_bank([
    ("bear moving to the left", "linear"),
    ("Bear  moving to the LEFT", "linear"),     # collapses onto the first
    ("panda falling down", "falling"),
])
print("bank:", bank.expressions)

# pooled frame features point at the right expressions
corpus = build_corpus(CorpusConfig(count=30, seed=3))
hits = 0
total = 0
for scene in corpus.scenes:
    pooled = frame_feature_matrix(scene.spec).mean(axis=0)
    for gt in scene.ground_truth:
        match = cosine(pooled, embed_text(gt.expression))
        rng = np.random.RandomState(scene.index)
        other = corpus.scenes[rng.randint(len(corpus.scenes))]
        foil = other.ground_truth[0].expression
        if foil != gt.expression:
            hits += match > cosine(pooled, embed_text(foil))
            total += 1
print(f"pooled features prefer their own expression in {hits}/{total} checks")
