import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from calm.metrics import (MetricError, auc_pr, auc_roc, best_threshold, f1, report, scored_set)


# brute-force oracles ---------------------------------------------------------

def oracle_auc_roc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = Fraction(0)
    for p in pos:
        for n in neg:
            wins += 1 if p > n else Fraction(1, 2) if p == n else 0
    return float(wins / (len(pos) * len(neg)))


def oracle_ap_cuts(scores, labels, ids):
    """Sum of (recall step) * precision over every cut of the (score desc, id asc) order."""
    order = sorted(range(len(scores)), key=lambda k: (-scores[k], ids[k]))
    n_pos = sum(labels)
    ap, prev_recall = Fraction(0), Fraction(0)
    for cut in range(1, len(order) + 1):
        tp = sum(labels[k] for k in order[:cut])
        recall = Fraction(tp, n_pos)
        ap += (recall - prev_recall) * Fraction(tp, cut)
        prev_recall = recall
    return float(ap)


def oracle_ap_thresholds(scores, labels):
    """Step-wise AP over distinct thresholds t, predicting positive when score >= t."""
    n_pos = sum(labels)
    ap, prev_recall = Fraction(0), Fraction(0)
    for t in sorted(set(scores), reverse=True):
        pred = [s >= t for s in scores]
        tp = sum(1 for p, y in zip(pred, labels) if p and y)
        recall = Fraction(tp, n_pos)
        ap += (recall - prev_recall) * Fraction(tp, sum(pred))
        prev_recall = recall
    return float(ap)


def oracle_f1(scores, labels, t):
    tp = sum(1 for s, y in zip(scores, labels) if s >= t and y)
    fp = sum(1 for s, y in zip(scores, labels) if s >= t and not y)
    fn = sum(1 for s, y in zip(scores, labels) if s < t and y)
    return 0.0 if tp == 0 else float(Fraction(2 * tp, 2 * tp + fp + fn))


def random_instance(rng, tied):
    n = rng.randint(2, 200)
    labels = [rng.randrange(2) for _ in range(n)]
    labels[0], labels[1] = 0, 1
    if tied:
        scores = [rng.randrange(8) / 8 for _ in range(n)]
    else:
        scores = rng.sample(range(10 ** 6), n)
        scores = [s / 10 ** 6 for s in scores]
    return scores, labels, [f"id{rng.randrange(10 ** 6):07d}" for _ in range(n)]


# examples --------------------------------------------------------------------

def test_auc_roc_examples():
    assert auc_roc(scored_set([0.9, 0.1], [1, 0])) == 1.0
    assert auc_roc(scored_set([0.1, 0.9], [1, 0])) == 0.0
    assert auc_roc(scored_set([0.3] * 6, [1, 0] * 3)) == 0.5
    with pytest.raises(MetricError):
        auc_roc(scored_set([0.1, 0.2], [1, 1]))


def test_auc_pr_examples():
    assert auc_pr(scored_set([0.9, 0.1], [1, 0])) == 1.0
    assert auc_pr(scored_set([0.1, 0.9], [1, 0])) == 0.5
    with pytest.raises(MetricError):
        auc_pr(scored_set([0.1, 0.2], [0, 0]))


def test_auc_pr_tie_order_by_id():
    assert auc_pr(scored_set([0.5, 0.5], [1, 0], ["a", "b"])) == 1.0
    assert auc_pr(scored_set([0.5, 0.5], [1, 0], ["b", "a"])) == 0.5


def test_f1_examples():
    assert f1(scored_set([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]), 0.5) == 1.0
    assert f1(scored_set([0.4, 0.3], [1, 0]), 0.5) == 0.0
    # TP=1, FP=1, FN=1
    assert f1(scored_set([0.9, 0.8, 0.1], [1, 0, 1]), 0.5) == 0.5
    with pytest.raises(MetricError):
        f1(scored_set([0.1], [1]), float("nan"))


def test_scored_set_validation():
    with pytest.raises(MetricError):
        scored_set([0.1, float("inf")], [0, 1])
    with pytest.raises(MetricError):
        scored_set([0.1], [2])
    with pytest.raises(MetricError):
        scored_set([0.1, 0.2], [1])


def test_report_keys():
    r = report(scored_set([0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0]))
    assert set(r) == {"auc_pr", "f1", "auc_roc", "threshold", "n_pos", "n_neg"}
    assert r["n_pos"] == 2 and r["n_neg"] == 2


# oracle agreement ------------------------------------------------------------

@pytest.mark.parametrize("tied", [False, True])
def test_metrics_equal_brute_force_oracles(tied):
    rng = random.Random(11 + tied)
    for _ in range(50):
        scores, labels, ids = random_instance(rng, tied)
        s = scored_set(scores, labels, ids)
        assert auc_roc(s) == oracle_auc_roc(scores, labels)
        assert auc_pr(s) == oracle_ap_cuts(scores, labels, ids)
        if not tied:
            assert auc_pr(s) == oracle_ap_thresholds(scores, labels)
        for t in set(scores):
            assert f1(s, t) == oracle_f1(scores, labels, t)
        bt = best_threshold(s)
        best = max(oracle_f1(scores, labels, t) for t in set(scores))
        assert f1(s, bt) == best
        assert bt == max(t for t in set(scores) if oracle_f1(scores, labels, t) == best)


@settings(max_examples=100)
@given(st.lists(st.tuples(st.integers(-10_000, 10_000), st.integers(0, 1)), min_size=2, max_size=60))
def test_auc_roc_invariant_to_monotone_transform(pairs):
    scores, labels = [p[0] for p in pairs], [p[1] for p in pairs]
    if len(set(labels)) < 2:
        return
    a = auc_roc(scored_set(scores, labels))
    # integer cubes stay exact in float64 over this range
    b = auc_roc(scored_set([3 * x ** 3 + x + 7 for x in scores], labels))
    assert a == b


@settings(max_examples=100)
@given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 1)), min_size=1, max_size=60),
       st.integers(-1, 21))
def test_best_threshold_dominates(pairs, t):
    s = scored_set([p[0] / 20 for p in pairs], [p[1] for p in pairs])
    assert f1(s, best_threshold(s)) >= f1(s, t / 20)
