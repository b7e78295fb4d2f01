"""Exact ranking metrics: AUC-ROC (Mann-Whitney), average precision, and thresholded F1.

Counts are accumulated in integers or rationals and rounded once at the
end, so results do not depend on summation order.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class ScoredSet:
    scores: tuple[float, ...]
    labels: tuple[int, ...]
    ids: tuple[str, ...] = ()

    def __post_init__(self):
        scores = tuple(float(s) for s in self.scores)
        labels = tuple(int(y) for y in self.labels)
        if len(scores) != len(labels):
            raise MetricError("scores and labels differ in length")
        if not all(np.isfinite(scores)):
            raise MetricError("scores must be finite")
        if any(y not in (0, 1) for y in labels):
            raise MetricError("labels must be 0 or 1")
        ids = tuple(str(i) for i in self.ids) if self.ids else tuple(f"{k:09d}" for k in range(len(scores)))
        if len(ids) != len(scores):
            raise MetricError("ids and scores differ in length")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return len(self.scores)

    @property
    def n_pos(self) -> int:
        return sum(self.labels)

    @property
    def n_neg(self) -> int:
        return len(self.labels) - self.n_pos


def auc_roc(s: ScoredSet) -> float:
    """P(random positive outranks random negative), ties counted one half."""
    if s.n_pos == 0 or s.n_neg == 0:
        raise MetricError("AUC-ROC needs both classes")
    scores = np.asarray(s.scores)
    labels = np.asarray(s.labels)
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    # midranks (1-based) for tied groups, doubled to stay in integers
    twice_rank = np.empty(len(scores), dtype=np.int64)
    k = 0
    while k < len(scores):
        e = k
        while e + 1 < len(scores) and sorted_scores[e + 1] == sorted_scores[k]:
            e += 1
        twice_rank[order[k:e + 1]] = (k + 1) + (e + 1)
        k = e + 1
    n_pos, n_neg = s.n_pos, s.n_neg
    twice_u = int(twice_rank[labels == 1].sum()) - n_pos * (n_pos + 1)
    return float(Fraction(twice_u, 2 * n_pos * n_neg))


def ranking(s: ScoredSet) -> list[int]:
    """Indices by descending score; ties ordered by ascending id."""
    return sorted(range(len(s)), key=lambda k: (-s.scores[k], s.ids[k]))


def auc_pr(s: ScoredSet) -> float:
    """Average precision: mean over positives of precision at each positive's rank."""
    if s.n_pos == 0:
        raise MetricError("AUC-PR needs at least one positive")
    total, hits = Fraction(0), 0
    for rank, k in enumerate(ranking(s), start=1):
        if s.labels[k] == 1:
            hits += 1
            total += Fraction(hits, rank)
    return float(total / s.n_pos)


def confusion(s: ScoredSet, threshold: float) -> tuple[int, int, int, int]:
    """(tp, fp, fn, tn) predicting positive when score >= threshold."""
    scores = np.asarray(s.scores)
    labels = np.asarray(s.labels)
    pred = scores >= threshold
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    return tp, fp, fn, len(labels) - tp - fp - fn


def f1(s: ScoredSet, threshold: float) -> float:
    if not np.isfinite(threshold):
        raise MetricError("threshold must be finite")
    tp, fp, fn, _ = confusion(s, threshold)
    if tp + fp == 0 or tp == 0:
        return 0.0
    return float(Fraction(2 * tp, 2 * tp + fp + fn))


def best_threshold(s: ScoredSet) -> float:
    """Observed score maximizing F1; the highest such threshold wins ties."""
    if not len(s):
        raise MetricError("empty scored set")
    best, best_t = -1.0, None
    for t in sorted(set(s.scores), reverse=True):
        v = f1(s, t)
        if v > best:
            best, best_t = v, t
    return float(best_t)


def report(s: ScoredSet, threshold: float | None = None) -> dict:
    """Metrics JSON payload. Without a threshold, F1 uses this set's own best threshold."""
    if threshold is None:
        threshold = best_threshold(s)
    return {
        "auc_pr": auc_pr(s),
        "f1": f1(s, threshold),
        "auc_roc": auc_roc(s),
        "threshold": float(threshold),
        "n_pos": s.n_pos,
        "n_neg": s.n_neg,
    }


def scored_set(scores: Sequence[float], labels: Sequence[int], ids: Sequence[str] = ()) -> ScoredSet:
    return ScoredSet(tuple(scores), tuple(labels), tuple(ids))
