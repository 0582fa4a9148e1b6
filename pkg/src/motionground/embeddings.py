"""Deterministic stand-in for the frozen vision-language encoder.

Text becomes a bag-of-words sum of per-token Gaussian vectors, each token
seeded by its FNV-1a 64-bit hash, so embeddings are bit-identical across
runs and platforms. Frame features are built per scene so that the pooled
video feature provably carries a recoverable trace of every agent's
expression embedding (weighted by agent area), plus a shared background
direction and seeded noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from .scenes import Scene, SceneSpec, expression_for
from .util import fnv1a64, stable_rng

EMBED_DIM = 512

# background direction token; angle brackets keep it out of expression space
BACKGROUND_TOKEN = "<background>"

_token_cache: dict[str, np.ndarray] = {}


class BankError(RuntimeError):
    pass


def token_vector(token: str) -> np.ndarray:
    """Unit-scale Gaussian vector seeded by the token's stable hash."""
    vec = _token_cache.get(token)
    if vec is None:
        h = fnv1a64(token.encode("utf-8"))
        rng = np.random.RandomState([h & 0xFFFFFFFF, h >> 32])
        vec = rng.standard_normal(EMBED_DIM)
        _token_cache[token] = vec
    return vec


def normalize_expression(s: str) -> str:
    return " ".join(s.lower().split())


def embed_text(s: str) -> np.ndarray:
    """512-d unit vector; pure function of the token multiset.

    Tokens are summed in sorted order, so any word order of the same
    multiset produces the identical bit pattern."""
    tokens = s.lower().split()
    if not tokens:
        raise ValueError("cannot embed an empty or whitespace-only string")
    total = np.zeros(EMBED_DIM)
    for tok in sorted(tokens):
        total += token_vector(tok)
    norm = np.linalg.norm(total)
    if norm == 0.0:
        raise ValueError(f"token vectors of {s!r} cancelled to zero")
    return total / norm


def _background_unit() -> np.ndarray:
    vec = token_vector(BACKGROUND_TOKEN)
    return vec / np.linalg.norm(vec)


def frame_feature_matrix(spec: SceneSpec, noise_sigma: float = 0.1,
                         background_weight: float = 0.12) -> np.ndarray:
    """Per-frame visual features, shape (T, 512), rows unit-norm.

    Each frame mixes every agent's expression embedding weighted by the
    agent's area fraction, a fixed background direction, and per-frame
    Gaussian noise seeded by the scene."""
    base = background_weight * _background_unit()
    canvas = spec.W * spec.H
    for agent in spec.agents:
        base = base + (agent.area() / canvas) * embed_text(expression_for(agent, spec.agents))
    feats = np.repeat(base[None, :], spec.T, axis=0)
    if noise_sigma > 0:
        rng = stable_rng(spec.seed, 0xFEA7)
        feats = feats + noise_sigma * rng.standard_normal(feats.shape)
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("frame feature collapsed to zero norm")
    return feats / norms


def frame_features(spec: SceneSpec, t: int, noise_sigma: float = 0.1,
                   background_weight: float = 0.12) -> np.ndarray:
    """Single frame's feature row (the matrix is the cheap bulk path)."""
    if not (0 <= t < spec.T):
        raise ValueError(f"frame {t} out of range for T={spec.T}")
    return frame_feature_matrix(spec, noise_sigma, background_weight)[t]


# ---------------------------------------------------------------------------
# text bank


@dataclass
class TextBank:
    expressions: list[str]
    embeddings: np.ndarray          # (N, 512) float64, unit rows
    class_tags: list[str | None] = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.expressions)

    def index_of(self, expression: str) -> int:
        key = normalize_expression(expression)
        try:
            return self.expressions.index(key)
        except ValueError:
            raise KeyError(f"expression {key!r} not in bank") from None


def build_text_bank(expressions: list[str | tuple[str, str | None]]) -> TextBank:
    """Deduplicate (lowercase, whitespace-collapsed), sort, embed.

    Items may be bare strings or (expression, motion_class) pairs."""
    tagged: dict[str, str | None] = {}
    for item in expressions:
        expr, tag = item if isinstance(item, tuple) else (item, None)
        key = normalize_expression(expr)
        if not key:
            raise ValueError("cannot bank an empty expression")
        if key not in tagged or tagged[key] is None:
            tagged[key] = tag
    ordered = sorted(tagged)
    if not ordered:
        raise BankError("refusing to build an empty bank")
    emb = np.stack([embed_text(e) for e in ordered])
    return TextBank(expressions=ordered, embeddings=emb,
                    class_tags=[tagged[e] for e in ordered])


def save_bank(bank: TextBank, path: str) -> None:
    checkpoint.save_arrays(path, {"embeddings": bank.embeddings}, extra={
        "kind": "text_bank",
        "count": bank.size,
        "dim": EMBED_DIM,
        "ordering": "lexicographic",
        "expressions": bank.expressions,
        "class_tags": bank.class_tags,
    })


def load_bank(path: str) -> TextBank:
    """Re-embeds the stored expressions and verifies the float32 blob
    matches; a mismatch means the file was corrupted or hand-edited."""
    arrays, extra = checkpoint.load_arrays(path)
    if extra.get("kind") != "text_bank":
        raise BankError(f"{path} is not a text bank")
    if extra["count"] == 0 or not extra["expressions"]:
        raise BankError(f"empty bank in {path}")
    if extra["dim"] != EMBED_DIM:
        raise BankError(f"bank dim {extra['dim']} does not match expected {EMBED_DIM}")
    stored = arrays["embeddings"]
    if stored.shape != (extra["count"], EMBED_DIM):
        raise BankError(
            f"bank blob shape {stored.shape} does not match manifest count {extra['count']}"
        )
    emb = np.stack([embed_text(e) for e in extra["expressions"]])
    if not np.array_equal(emb.astype("<f4"), stored):
        raise BankError(f"bank blob in {path} does not match its expressions; corrupt file?")
    return TextBank(expressions=list(extra["expressions"]), embeddings=emb,
                    class_tags=list(extra["class_tags"]))


def bank_for_corpus(corpus, distractor_ratio: float = 3.0, seed: int = 11,
                    extras: list[tuple[str, str | None]] | None = None) -> TextBank:
    from .scenes import distractor_expressions

    items: list[tuple[str, str | None]] = list(corpus.all_expressions())
    true_expressions = [e for e, _ in items]
    items += distractor_expressions(true_expressions, distractor_ratio, seed)
    if extras:
        items += extras
    return build_text_bank(items)


def positive_indices(bank: TextBank, scene: Scene) -> list[int]:
    """Bank indices of a scene's ground-truth expressions."""
    return [bank.index_of(gt.expression) for gt in scene.ground_truth]
