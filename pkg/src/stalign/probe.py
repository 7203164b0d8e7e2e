"""Linear probing of frozen embeddings."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata


class DegenerateDataError(ValueError):
    pass


@dataclass
class ProbeMetrics:
    acc: float
    auc: float
    f1: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def roc_auc(labels: np.ndarray, scores: np.ndarray) -> float:
    """Mann-Whitney rank AUC; tied scores share their average rank."""
    labels = np.asarray(labels).astype(bool).ravel()
    scores = np.asarray(scores, dtype=np.float64).ravel()
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateDataError("AUC needs both positive and negative examples")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def fit_logistic(X: np.ndarray, y: np.ndarray, n_classes: int, steps: int = 500, lr: float = 0.1):
    """Full-batch gradient descent on softmax cross-entropy from zero weights."""
    n, d = X.shape
    W = np.zeros((d, n_classes))
    b = np.zeros(n_classes)
    onehot = np.eye(n_classes)[y]
    for _ in range(steps):
        p = _softmax(X @ W + b)
        g = (p - onehot) / n
        W -= lr * (X.T @ g)
        b -= lr * g.sum(axis=0)
    return W, b


def probe_scores(
    train_x: np.ndarray,
    train_y: np.ndarray,
    test_x: np.ndarray,
    n_classes: int,
    *,
    steps: int = 500,
    lr: float = 0.1,
) -> np.ndarray:
    """Class probabilities ``(n_test, n_classes)`` from a probe fit on standardised features."""
    train_x = np.asarray(train_x, dtype=np.float64)
    test_x = np.asarray(test_x, dtype=np.float64)
    mu = train_x.mean(axis=0)
    sd = train_x.std(axis=0)
    sd[sd == 0] = 1.0
    W, b = fit_logistic((train_x - mu) / sd, np.asarray(train_y, dtype=np.int64), n_classes, steps, lr)
    return _softmax(((test_x - mu) / sd) @ W + b)


def linear_probe(
    train_x: np.ndarray,
    train_y: np.ndarray,
    test_x: np.ndarray,
    test_y: np.ndarray,
    *,
    steps: int = 500,
    lr: float = 0.1,
) -> ProbeMetrics:
    """Train a linear classifier on frozen features and score the test split.

    Features are standardised with training statistics. Two classes give
    accuracy at p=0.5, AUC of the positive score and positive-class F1; more
    classes give argmax accuracy and micro-averaged one-vs-rest AUC and F1.
    """
    train_y = np.asarray(train_y, dtype=np.int64)
    test_y = np.asarray(test_y, dtype=np.int64)
    if len(np.unique(train_y)) < 2:
        raise DegenerateDataError("training labels contain a single class")
    n_classes = int(max(train_y.max(), test_y.max())) + 1
    probs = probe_scores(train_x, train_y, test_x, n_classes, steps=steps, lr=lr)
    pred = probs.argmax(axis=1)
    acc = float(np.mean(pred == test_y))
    if n_classes == 2:
        auc = roc_auc(test_y == 1, probs[:, 1])
        tp = np.sum((pred == 1) & (test_y == 1))
        fp = np.sum((pred == 1) & (test_y == 0))
        fn = np.sum((pred == 0) & (test_y == 1))
        f1 = float(2 * tp / (2 * tp + fp + fn)) if tp + fp + fn else 0.0
    else:
        onehot = np.eye(n_classes, dtype=bool)[test_y]
        auc = roc_auc(onehot, probs)
        # single-label multi-class: micro precision == micro recall == accuracy
        f1 = acc
    return ProbeMetrics(acc, auc, f1)
