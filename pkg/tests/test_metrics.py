"""Retrieval, grounding, and discovery metric functions."""

import math

import numpy as np
import pytest

from motionground.discovery import DiscoveredSet
from motionground.embeddings import TextBank
from motionground.metrics import (discovery_metrics, grounding_metrics,
                                  retrieval_metrics)
from motionground.util import stable_rng


def binom_tail_quantile(n: int, p: float, q: float) -> int:
    """Smallest k with P(X <= k) >= q for X ~ Binomial(n, p)."""
    acc = 0.0
    for k in range(n + 1):
        acc += math.comb(n, k) * p**k * (1 - p) ** (n - k)
        if acc >= q:
            return k
    return n


class TestRetrieval:
    def test_identity_sims_give_perfect_recall(self):
        sims = np.full((4, 6), 0.0)
        positives = [[0], [1], [2], [3]]
        for i, p in enumerate(positives):
            sims[i, p] = 1.0
        out = retrieval_metrics(sims, positives)
        assert all(out[k] == 1.0 for k in out)

    def test_adversarial_sims_give_zero(self):
        n_bank = 20
        sims = np.tile(np.arange(n_bank, 0, -1, dtype=float), (5, 1))
        positives = [[n_bank - 1]] * 5  # positive always ranked last
        out = retrieval_metrics(sims, positives)
        assert out["v2t_r1"] == out["v2t_r5"] == out["v2t_r10"] == 0.0

    def test_random_sims_match_binomial_chance(self):
        # Monte-Carlo oracle: 100 scenes, one positive among 50 entries;
        # V2T R@1 concentrates near 0.02 within the binomial CI
        rng = stable_rng(123)
        sims = rng.standard_normal((100, 50))
        positives = [[int(rng.randint(50))] for _ in range(100)]
        out = retrieval_metrics(sims, positives)
        hi = binom_tail_quantile(100, 1 / 50, 0.999) / 100
        assert out["v2t_r1"] <= hi
        assert out["v2t_r10"] >= out["v2t_r5"] >= out["v2t_r1"]

    def test_scene_without_positives_rejected(self):
        with pytest.raises(ValueError, match="no positive"):
            retrieval_metrics(np.zeros((2, 3)), [[0], []])

    def test_scene_permutation_invariance(self):
        rng = stable_rng(5)
        sims = rng.standard_normal((8, 10))
        positives = [[int(rng.randint(10))] for _ in range(8)]
        base = retrieval_metrics(sims, positives)
        perm = stable_rng(6).permutation(8)
        shuffled = retrieval_metrics(sims[perm], [positives[i] for i in perm])
        assert base == shuffled

    def test_tie_break_by_ascending_index(self):
        sims = np.zeros((1, 4))
        assert retrieval_metrics(sims, [[0]], ks=(1,))["v2t_r1"] == 1.0
        assert retrieval_metrics(sims, [[3]], ks=(1,))["v2t_r1"] == 0.0


class TestGrounding:
    def test_exact_match(self):
        assert grounding_metrics([1, 2, 3], [1, 2, 3], 10) == (1.0, 1.0)

    def test_disjoint(self):
        assert grounding_metrics([4, 5], [1, 2], 10) == (0.0, 0.0)

    def test_partial_overlap_arithmetic(self):
        j, f = grounding_metrics([1, 2], [1, 2, 3, 4], 10)
        assert j == pytest.approx(0.5)
        assert f == pytest.approx(2 / 3)

    def test_empty_cases(self):
        assert grounding_metrics([], [1], 10) == (0.0, 0.0)
        assert grounding_metrics([], [], 10) == (1.0, 1.0)

    def test_out_of_range_prediction_rejected(self):
        with pytest.raises(ValueError, match="range"):
            grounding_metrics([10], [1], 10)

    def test_j_bounded_by_precision_and_recall(self):
        rng = stable_rng(7)
        for _ in range(50):
            n = 20
            pred = rng.choice(n, size=rng.randint(1, 10), replace=False).tolist()
            pos = rng.choice(n, size=rng.randint(1, 10), replace=False).tolist()
            j, f = grounding_metrics(pred, pos, n)
            inter = len(set(pred) & set(pos))
            precision = inter / len(pred)
            recall = inter / len(pos)
            assert j <= precision + 1e-12 and j <= recall + 1e-12


def bank_with_tags(tags=True):
    exprs = ["a left", "b circle", "c still", "d falls"]
    return TextBank(expressions=exprs, embeddings=np.eye(4, 512),
                    class_tags=["linear", "circular", "stationary", "falling"]
                    if tags else [None] * 4)


def dset(indices, bank):
    return DiscoveredSet(entries=[(i, bank.expressions[i], 1.0 - 0.1 * i)
                                  for i in indices])


class TestDiscovery:
    def test_exact_discovery_is_perfect(self):
        bank = bank_with_tags()
        out = discovery_metrics([dset([0, 1], bank), dset([2], bank)],
                                [["a left", "b circle"], ["c still"]], bank)
        assert out["coverage"] == 1.0 and out["precision"] == 1.0
        assert out["avg_expressions"] == pytest.approx(1.5)

    def test_empty_discovery_flagged(self):
        bank = bank_with_tags()
        out = discovery_metrics([DiscoveredSet(entries=[])], [["a left"]], bank)
        assert out["coverage"] == 0.0
        assert out["precision"] == 0.0
        assert out["avg_expressions"] == 0.0
        assert out["empty_discovery_flag"]

    def test_diversity_counts_distinct_classes(self):
        bank = bank_with_tags()
        out = discovery_metrics([dset([0, 1, 2, 3], bank)], [["a left"]], bank)
        assert out["diversity"] == 4.0

    def test_diversity_absent_without_tags(self):
        bank = bank_with_tags(tags=False)
        out = discovery_metrics([dset([0, 1], bank)], [["a left"]], bank)
        assert out["diversity"] is None

    def test_precision_counts_fraction_of_gt(self):
        bank = bank_with_tags()
        out = discovery_metrics([dset([0, 1, 2], bank)], [["a left"]], bank)
        assert out["precision"] == pytest.approx(1 / 3)
        assert out["coverage"] == 1.0
