import warnings

import numpy as np
import pytest

from gazevit.metrics import DegenerateAUC, compute_metrics


def brute_force(scores, labels, num_classes):
    """Confusion-matrix F1 and pairwise-counting AUC, written without ranks."""
    n = len(labels)
    pred = [max(range(num_classes), key=lambda c: (scores[i][c], -c)) for i in range(n)]
    acc = sum(p == y for p, y in zip(pred, labels)) / n
    cm = [[0] * num_classes for _ in range(num_classes)]
    for p, y in zip(pred, labels):
        cm[y][p] += 1
    f1s, aucs = [], []
    for c in range(num_classes):
        tp = cm[c][c]
        fn = sum(cm[c]) - tp
        fp = sum(cm[r][c] for r in range(num_classes)) - tp
        if tp + fn:
            f1s.append(2 * tp / (2 * tp + fp + fn))
        pos = [scores[i][c] for i in range(n) if labels[i] == c]
        neg = [scores[i][c] for i in range(n) if labels[i] != c]
        if pos and neg:
            wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
            aucs.append(wins / (len(pos) * len(neg)))
    return acc, sum(f1s) / len(f1s), (sum(aucs) / len(aucs) if aucs else None)


def random_instance(rng, n_max=20, c_max=4):
    C = int(rng.integers(2, c_max + 1))
    n = int(rng.integers(2, n_max + 1))
    raw = rng.integers(0, 4, (n, C)).astype(float) if rng.uniform() < 0.5 else rng.uniform(size=(n, C))
    raw += 1e-3
    return raw / raw.sum(axis=1, keepdims=True), rng.integers(0, C, n), C


def test_perfect():
    labels = np.array([0, 1, 2, 1])
    m = compute_metrics(np.eye(3)[labels], labels)
    assert (m.acc, m.f1, m.auc) == (1.0, 1.0, 1.0)


def test_uniform_scores_half_auc():
    m = compute_metrics(np.full((6, 2), 0.5), np.array([0, 1, 0, 1, 0, 1]))
    assert m.auc == 0.5


def test_four_sample_case():
    # every positive score (0.9, 0.8) beats every negative (0.3, 0.4): 4/4 pairs
    p1 = np.array([0.9, 0.8, 0.3, 0.4])
    m = compute_metrics(np.stack([1 - p1, p1], 1), np.array([1, 1, 0, 0]))
    assert m.auc == 1.0 and m.acc == 1.0


def test_single_class_auc_undefined():
    with pytest.warns(DegenerateAUC):
        m = compute_metrics(np.array([[0.7, 0.3], [0.6, 0.4]]), np.array([0, 0]))
    assert m.auc is None
    assert m.acc == 1.0


def test_argmax_tie_lowest_class():
    m = compute_metrics(np.array([[0.5, 0.5], [0.5, 0.5]]), np.array([0, 1]))
    assert m.acc == 0.5


def test_three_class_twelve_samples():
    rng = np.random.default_rng(12)
    raw = rng.uniform(size=(12, 3))
    scores = raw / raw.sum(1, keepdims=True)
    labels = np.array([0, 1, 2] * 4)
    m = compute_metrics(scores, labels)
    acc, f1, auc = brute_force(scores.tolist(), labels.tolist(), 3)
    assert abs(m.acc - acc) <= 1e-12 and abs(m.f1 - f1) <= 1e-12 and abs(m.auc - auc) <= 1e-12


def test_acc_is_support_weighted_recall():
    rng = np.random.default_rng(5)
    for _ in range(20):
        scores, labels, C = random_instance(rng)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateAUC)
            m = compute_metrics(scores, labels, C)
        weighted = sum(r["recall"] * r["support"] for r in m.per_class if r["support"]) / len(labels)
        assert abs(weighted - m.acc) < 1e-12
        assert 0 <= m.f1 <= 1 and (m.auc is None or 0 <= m.auc <= 1)


def test_against_brute_force_many():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        scores, labels, C = random_instance(rng)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateAUC)
            m = compute_metrics(scores, labels, C)
        acc, f1, auc = brute_force(scores.tolist(), labels.tolist(), C)
        assert abs(m.acc - acc) <= 1e-12
        assert abs(m.f1 - f1) <= 1e-12
        assert (m.auc is None and auc is None) or abs(m.auc - auc) <= 1e-12
