import math

import numpy as np
import pytest

from rantwin.errors import ConfigurationError, DomainError
from rantwin.evaluation import (
    TsneConfig,
    accuracy,
    conditional_gaussian_probs,
    confusion,
    joint_probabilities,
    silhouette,
    tsne,
)


class TestAccuracy:
    def test_perfect(self):
        assert accuracy([0, 1, 2, 3], [0, 1, 2, 3]) == 1.0

    def test_disjoint(self):
        assert accuracy([0, 0, 0], [1, 2, 3]) == 0.0

    def test_nine_of_ten(self):
        preds = [0] * 9 + [1]
        labels = [0] * 10
        assert accuracy(preds, labels) == pytest.approx(0.9)

    def test_errors(self):
        with pytest.raises(DomainError):
            accuracy([0], [0, 1])
        with pytest.raises(DomainError):
            accuracy([], [])


class TestConfusion:
    def test_perfect_is_diagonal(self):
        cm = confusion([0, 1, 2, 3, 3], [0, 1, 2, 3, 3])
        assert np.array_equal(np.diag(np.diag(cm.counts)), cm.counts)

    def test_spec_example(self):
        cm = confusion([0, 1, 1], [0, 0, 1])
        expected = np.zeros((4, 4), dtype=np.int64)
        expected[0, 0] = 1
        expected[0, 1] = 1
        expected[1, 1] = 1
        assert np.array_equal(cm.counts, expected)

    def test_trace_over_total_equals_accuracy(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = int(rng.integers(1, 50))
            preds = rng.integers(0, 4, size=n).tolist()
            labels = rng.integers(0, 4, size=n).tolist()
            cm = confusion(preds, labels)
            assert cm.accuracy() == accuracy(preds, labels)
            assert cm.total() == n

    def test_row_sums_are_class_counts(self):
        labels = [0, 0, 1, 2, 3, 3, 3]
        preds = [0, 1, 1, 2, 3, 0, 3]
        cm = confusion(preds, labels)
        assert cm.counts.sum(axis=1).tolist() == [2, 1, 1, 3]

    def test_csv_layout(self):
        cm = confusion([0, 1], [0, 1])
        lines = cm.to_csv().splitlines()
        assert lines[0] == "true\\pred,Normal,RsrpError,RsrqError,SinrError"
        assert len(lines) == 5
        assert lines[1].startswith("Normal,")


def blobs(rng, n_per, centers, sigma):
    points = []
    labels = []
    for i, c in enumerate(centers):
        points.append(rng.normal(0.0, sigma, size=(n_per, len(c))) + np.array(c))
        labels.extend([i] * n_per)
    return np.vstack(points), np.array(labels)


class TestTsne:
    def test_p_matrix_properties(self):
        rng = np.random.default_rng(1)
        x = rng.normal(0, 1, size=(60, 4))
        p = joint_probabilities(x, 15.0)
        assert np.abs(p - p.T).max() < 1e-12
        assert (p >= 0).all()
        assert p.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.allclose(np.diag(p), 0.0)

    def test_conditional_perplexity_matches_config(self):
        rng = np.random.default_rng(2)
        x = rng.normal(0, 1, size=(80, 4))
        d2 = (x[:, None, :] - x[None, :, :]) ** 2
        d2 = d2.sum(axis=2)
        target = 25.0
        p_cond, _ = conditional_gaussian_probs(d2, target)
        for i in range(x.shape[0]):
            row = p_cond[i][p_cond[i] > 0]
            perp = math.exp(-(row * np.log(row)).sum())
            assert perp == pytest.approx(target, abs=1e-3 * target)

    def test_separated_blobs_embed_separably(self):
        # two tight 4-d blobs far apart must stay separated in 2-d;
        # perplexity near the blob size keeps intra-blob attraction dominant,
        # and the learning rate is scaled down for n = 50
        rng = np.random.default_rng(3)
        x, labels = blobs(rng, 25, [(0, 0, 0, 0), (10, 0, 0, 0)], sigma=0.1)
        config = TsneConfig(perplexity=15.0, iterations=500, learning_rate=50.0, seed=4)
        emb = tsne(x, config)
        assert silhouette(emb.points, labels) > 0.9

    def test_final_kl_below_initial(self):
        rng = np.random.default_rng(5)
        x, _ = blobs(rng, 20, [(0,) * 4, (6, 0, 0, 0), (0, 6, 0, 0)], sigma=0.5)
        emb = tsne(x, TsneConfig(perplexity=12.0, iterations=300, learning_rate=10.0, seed=6))
        assert emb.final_kl < emb.initial_kl
        assert emb.final_kl >= 0.0

    def test_deterministic(self):
        rng = np.random.default_rng(7)
        x = rng.normal(0, 1, size=(40, 4))
        cfg = TsneConfig(perplexity=8.0, iterations=120, seed=8)
        a = tsne(x, cfg)
        b = tsne(x, cfg)
        assert np.array_equal(a.points, b.points)
        assert a.final_kl == b.final_kl

    def test_infeasible_perplexity_rejected(self):
        rng = np.random.default_rng(9)
        x = rng.normal(0, 1, size=(30, 4))
        with pytest.raises(ConfigurationError, match="perplexity"):
            tsne(x, TsneConfig(perplexity=10.0, iterations=10, seed=0))  # (30-1)/3 < 10

    def test_too_few_points_rejected(self):
        with pytest.raises(ConfigurationError):
            tsne(np.zeros((3, 4)), TsneConfig(perplexity=2.0, iterations=10, seed=0))

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            TsneConfig(perplexity=0.5)
        with pytest.raises(ConfigurationError):
            TsneConfig(momentum=1.0)
        with pytest.raises(ConfigurationError):
            TsneConfig(early_exaggeration=0.5)

    def test_embedding_is_finite_2d(self):
        rng = np.random.default_rng(10)
        x = rng.normal(0, 1, size=(25, 4))
        emb = tsne(x, TsneConfig(perplexity=5.0, iterations=60, seed=11))
        assert emb.points.shape == (25, 2)
        assert np.isfinite(emb.points).all()


class TestSilhouette:
    def test_hand_computed_four_points(self):
        # a = 1 for every point; b = mean(10, sqrt(101)) = 10.0249
        points = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])
        labels = [0, 0, 1, 1]
        a = 1.0
        b = (10.0 + math.sqrt(101.0)) / 2.0
        expected = (b - a) / max(a, b)
        assert expected == pytest.approx(0.900, abs=5e-4)
        assert silhouette(points, labels) == pytest.approx(expected, rel=1e-12)

    def test_identical_coordinates_score_zero(self):
        points = np.zeros((6, 2))
        assert silhouette(points, [0, 0, 0, 1, 1, 1]) == 0.0

    def test_singletons_contribute_zero(self):
        points = np.array([[0.0, 0.0], [100.0, 0.0], [100.0, 1.0]])
        score = silhouette(points, [0, 1, 1])
        by_hand = (0.0 + 2 * ((math.hypot(100, 0) + math.hypot(100, 1)) / 2 - 1.0)
                   / max(1.0, (math.hypot(100, 0) + math.hypot(100, 1)) / 2)) / 3
        assert score == pytest.approx(by_hand, rel=1e-9)

    def test_single_label_rejected(self):
        with pytest.raises(DomainError):
            silhouette(np.zeros((4, 2)), [1, 1, 1, 1])

    def test_bounded_on_random_inputs(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            n = int(rng.integers(8, 40))
            pts = rng.normal(0, 5, size=(n, 2))
            labels = rng.integers(0, 3, size=n)
            if np.unique(labels).size < 2:
                continue
            s = silhouette(pts, labels)
            assert -1.0 <= s <= 1.0

    def test_matches_sklearn_reference(self):
        sklearn_metrics = pytest.importorskip("sklearn.metrics")
        rng = np.random.default_rng(13)
        pts, labels = blobs(rng, 12, [(0, 0), (4, 0), (0, 4)], sigma=1.0)
        ours = silhouette(pts, labels)
        theirs = float(sklearn_metrics.silhouette_score(pts, labels))
        assert ours == pytest.approx(theirs, rel=1e-9)
