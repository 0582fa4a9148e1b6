"""Relevance scoring, selection decoders, and threshold calibration."""

import numpy as np
import pytest

from motionground import autodiff as ad
from motionground.grounding import (GroundingConfig, GroundingHead, calibrate_threshold,
                                    jaccard, otsu_threshold, relevance,
                                    relevance_probability, select_tracks)
from motionground.layers import ParamStore
from motionground.util import stable_rng


def make_head(heads=1, sigma=0.0, seed=0):
    store = ParamStore()
    return GroundingHead(store, GroundingConfig(heads=heads, init_sigma=sigma),
                         stable_rng(seed))


def unit_rows(n, d=512, seed=0):
    m = stable_rng(seed).standard_normal((n, d))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


class TestRelevance:
    def test_identity_projections_give_cosine_and_self_max(self):
        head = make_head(heads=1, sigma=0.0)
        m = unit_rows(8)
        out = relevance(head, m[5], m)
        assert out.scores[5] == pytest.approx(1.0, abs=1e-12)
        assert np.argmax(out.scores) == 5
        assert np.allclose(out.scores, m @ m[5], atol=1e-9)

    def test_scores_bounded_by_one(self):
        head = make_head(heads=4, sigma=0.01)
        m = unit_rows(30, seed=3)
        out = relevance(head, m[0], m)
        assert np.all(np.abs(out.scores) <= 1.0 + 1e-12)
        assert out.per_head.shape == (4, 30)
        assert np.allclose(out.per_head.mean(axis=0), out.scores, atol=1e-12)

    def test_permutation_equivariance_is_exact(self):
        head = make_head(heads=4, sigma=0.01)
        m = unit_rows(20, seed=4)
        perm = stable_rng(5).permutation(20)
        base = relevance(head, m[0], m).scores
        permuted = relevance(head, m[0], m[perm]).scores
        assert np.array_equal(base[perm], permuted)

    def test_scale_invariance_of_argmax(self):
        head = make_head(heads=2, sigma=0.01)
        m = unit_rows(15, seed=6)
        base = relevance(head, m[2], m).scores
        scaled = relevance(head, m[2], 7.5 * m).scores
        assert np.argmax(scaled) == np.argmax(base)
        assert np.allclose(base, scaled, atol=1e-9)

    def test_empty_descriptors_rejected(self):
        head = make_head()
        with pytest.raises(ValueError):
            relevance(head, unit_rows(1)[0], np.zeros((0, 512)))

    def test_degenerate_query_projection_is_an_error(self):
        head = make_head(heads=1, sigma=0.0)
        head.q_maps[0].w.data = np.zeros((512, 512))
        with pytest.raises(ad.NumericsError, match="zero norm"):
            relevance(head, unit_rows(1)[0], unit_rows(4))


class TestRelevanceProbability:
    def test_zero_score_is_half(self):
        for tau in (0.1, 1.0, 7.0):
            assert relevance_probability(0.0, tau) == pytest.approx(0.5)

    def test_small_temperature_saturates(self):
        assert relevance_probability(1.0, 1e-4) > 1 - 1e-6

    def test_monotone_in_score(self):
        p = relevance_probability(np.linspace(-1, 1, 21), 0.5)
        assert np.all(np.diff(p) > 0)

    def test_temperature_must_be_positive(self):
        with pytest.raises(ValueError):
            relevance_probability(0.3, 0.0)

    def test_learnable_temperature_is_positive_by_construction(self):
        head = make_head()
        head.log_tau.data = np.array(-3.0)
        assert float(head.tau().data) > 0


class TestSelectTracks:
    def test_threshold_selects_inclusive(self):
        mask = select_tracks(np.array([0.9, 0.9, -0.8]), "threshold", threshold=0.0)
        assert mask.tolist() == [True, True, False]
        mask = select_tracks(np.array([0.5, 0.5]), "threshold", threshold=0.5)
        assert mask.all()

    def test_all_equal_scores_all_selected(self):
        mask = select_tracks(np.full(6, 0.3), "threshold", threshold=0.3)
        assert mask.all()

    def test_empty_scores_rejected(self):
        with pytest.raises(ValueError):
            select_tracks(np.array([]), "threshold", threshold=0.0)

    def test_otsu_recovers_bimodal_clusters(self):
        rng = stable_rng(7)
        hi = 0.8 + 0.01 * rng.standard_normal(12)
        lo = -0.5 + 0.01 * rng.standard_normal(20)
        scores = np.concatenate([hi, lo])
        mask = select_tracks(scores, "otsu")
        assert mask[:12].all() and not mask[12:].any()

    def test_otsu_against_brute_force(self):
        scores = np.array([0.1, 0.15, 0.8, 0.82, 0.2, 0.85])
        thr = otsu_threshold(scores)
        s = np.sort(scores)
        best, best_thr = -np.inf, None
        for k in range(1, len(s)):
            lo, hi = s[:k], s[k:]
            gain = lo.size * hi.size * (lo.mean() - hi.mean()) ** 2
            if gain > best:
                best, best_thr = gain, hi[0]
        assert thr == pytest.approx(best_thr)


class TestCalibration:
    def test_recovers_separating_threshold(self):
        scores = [np.array([0.9, 0.8, 0.1, 0.0]), np.array([0.7, 0.85, -0.2, 0.05])]
        positives = [[0, 1], [0, 1]]
        thr = calibrate_threshold(scores, positives)
        for s, p in zip(scores, positives):
            assert jaccard(s >= thr, p) == 1.0

    def test_maximizes_mean_jaccard(self):
        rng = stable_rng(8)
        scores, positives = [], []
        for _ in range(10):
            pos = rng.choice(30, size=6, replace=False).tolist()
            s = rng.uniform(-0.2, 0.2, size=30)
            s[pos] += 0.5
            scores.append(s)
            positives.append(pos)
        thr = calibrate_threshold(scores, positives)
        best = np.mean([jaccard(s >= thr, p) for s, p in zip(scores, positives)])
        for candidate in np.unique(np.concatenate(scores)):
            mean_j = np.mean([jaccard(s >= candidate, p)
                              for s, p in zip(scores, positives)])
            assert mean_j <= best + 1e-12
