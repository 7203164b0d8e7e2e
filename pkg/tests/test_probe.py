import numpy as np
import pytest

from stalign.probe import DegenerateDataError, fit_logistic, linear_probe, probe_scores, roc_auc


def pairwise_auc(labels, scores):
    """O(n^2) oracle: fraction of (pos, neg) pairs ordered correctly, ties count half."""
    labels = np.asarray(labels).astype(bool).ravel()
    scores = np.asarray(scores, dtype=np.float64).ravel()
    pos, neg = scores[labels], scores[~labels]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def hand_built_set():
    """Twenty 2D points: two overlapping clusters separated along x."""
    xs = np.array([-2.0, -1.6, -1.3, -1.0, -0.8, -0.5, -0.3, -0.1, 0.2, 0.4,
                   -0.4, -0.2, 0.1, 0.3, 0.6, 0.9, 1.1, 1.4, 1.8, 2.1])
    ys = np.tile([0.5, -0.5], 10)
    labels = np.array([0] * 10 + [1] * 10)
    return np.stack([xs, ys], axis=1), labels


class TestAUC:
    def test_hand_built_matches_pairwise_oracle(self):
        X, y = hand_built_set()
        m = linear_probe(X, y, X, y)
        mu, sd = X.mean(axis=0), X.std(axis=0)
        W, _ = fit_logistic((X - mu) / sd, y, 2)
        # the fitted boundary separates the clusters along +x
        assert W[0, 1] - W[0, 0] > 0
        scores = probe_scores(X, y, X, 2)[:, 1]
        assert abs(m.auc - pairwise_auc(y, scores)) < 1e-6
        assert m.auc >= 0.85

    @pytest.mark.parametrize("seed", range(10))
    def test_rank_method_equals_pairwise(self, seed):
        r = np.random.default_rng(seed)
        n = int(r.integers(10, 200))
        labels = r.integers(0, 2, size=n)
        labels[:2] = [0, 1]
        scores = np.round(r.normal(size=n), 1)  # rounding forces ties
        assert abs(roc_auc(labels, scores) - pairwise_auc(labels, scores)) < 1e-6

    def test_perfect_and_reversed(self):
        assert roc_auc([0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9]) == 1.0
        assert roc_auc([0, 0, 1, 1], [0.9, 0.8, 0.2, 0.1]) == 0.0

    def test_single_class(self):
        with pytest.raises(DegenerateDataError):
            roc_auc([1, 1], [0.3, 0.4])


class TestProbe:
    def test_separable_binary(self, rng):
        X = np.concatenate([rng.normal(-3, 0.5, size=(30, 4)), rng.normal(3, 0.5, size=(30, 4))])
        y = np.array([0] * 30 + [1] * 30)
        m = linear_probe(X[::2], y[::2], X[1::2], y[1::2])
        assert m.acc == 1.0 and m.auc == 1.0 and m.f1 == 1.0

    def test_separable_multiclass(self, rng):
        centers = np.eye(4) * 6
        y = np.repeat(np.arange(4), 20)
        X = centers[y] + rng.normal(scale=0.5, size=(80, 4))
        m = linear_probe(X[::2], y[::2], X[1::2], y[1::2])
        assert m.acc == 1.0 and m.auc == 1.0

    def test_multiclass_auc_is_micro_one_vs_rest(self, rng):
        y = np.repeat(np.arange(3), 15)
        X = np.eye(3)[y] + rng.normal(scale=1.2, size=(45, 3))
        m = linear_probe(X, y, X, y)
        # flattened one-vs-rest score/label vectors scored by the oracle
        probs = probe_scores(X, y, X, 3)
        assert abs(m.auc - pairwise_auc(np.eye(3, dtype=bool)[y], probs)) < 1e-6

    def test_shuffled_labels_near_chance(self):
        aucs = []
        for seed in range(5):
            r = np.random.default_rng(seed)
            X = r.normal(size=(200, 8))
            y = r.integers(0, 2, size=200)
            aucs.append(linear_probe(X[:140], y[:140], X[140:], y[140:]).auc)
        assert abs(np.mean(aucs) - 0.5) < 0.1
        assert all(abs(a - 0.5) < 0.2 for a in aucs)

    def test_metrics_in_unit_interval(self, rng):
        X = rng.normal(size=(50, 3))
        y = rng.integers(0, 3, size=50)
        y[:3] = [0, 1, 2]
        m = linear_probe(X[:35], y[:35], X[35:], y[35:])
        assert all(0.0 <= v <= 1.0 for v in m.as_dict().values())

    def test_binary_f1_positive_class(self):
        X = np.array([[0.0], [1.0], [2.0], [3.0]])
        y = np.array([0, 0, 1, 1])
        m = linear_probe(X, y, np.array([[0.0], [3.0], [0.5]]), np.array([1, 1, 0]))
        # predictions 0, 1, 0: tp=1, fp=0, fn=1
        assert m.f1 == pytest.approx(2 / 3)
        assert m.acc == pytest.approx(2 / 3)

    def test_single_class_training(self):
        with pytest.raises(DegenerateDataError):
            linear_probe(np.ones((4, 2)), [1, 1, 1, 1], np.ones((2, 2)), [0, 1])
