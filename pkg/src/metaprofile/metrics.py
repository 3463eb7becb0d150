"""Ranking metrics for binary scores.

``auroc`` uses mid-rank statistics in integer arithmetic, so it is exact up to one
final rounding. ``aupr`` is average precision: positives visited in descending
score order, ties broken by input position (earlier first).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class ScoredSample:
    score: float
    label: int

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError("score must be finite")
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")


def _unpack(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    if labels is None:
        samples = list(scores)
        s = np.array([x.score for x in samples], dtype=np.float64)
        y = np.array([x.label for x in samples], dtype=np.int64)
    else:
        s = np.asarray(scores, dtype=np.float64).ravel()
        y = np.asarray(labels).astype(np.int64).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be 0/1")
    return s, y


def auroc_fraction(scores, labels=None) -> Fraction:
    s, y = _unpack(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs at least one positive and one negative")
    order = np.argsort(s, kind="stable")
    ss = s[order]
    # 1-based start/end positions of each tie group; twice the mid-rank is start + end
    starts = np.flatnonzero(np.r_[True, ss[1:] != ss[:-1]])
    ends = np.r_[starts[1:], len(ss)]
    twice = np.empty(len(ss), dtype=np.int64)
    for a, b in zip(starts, ends):
        twice[a:b] = (a + 1) + b
    twice_rank_sum = int(twice[y[order] == 1].sum())
    u2 = twice_rank_sum - n_pos * (n_pos + 1)
    return Fraction(u2, 2 * n_pos * n_neg)


def auroc(scores, labels=None) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie)."""
    return float(auroc_fraction(scores, labels))


def _ap(y_sorted: np.ndarray) -> float:
    n_pos = int(y_sorted.sum())
    tp = np.cumsum(y_sorted)
    k = np.arange(1, len(y_sorted) + 1)
    hits = y_sorted == 1
    return math.fsum((tp[hits] / k[hits]).tolist()) / n_pos


def aupr(scores, labels=None) -> float:
    s, y = _unpack(scores, labels)
    if y.sum() == 0:
        raise UndefinedMetricError("AUPR needs at least one positive")
    order = np.lexsort((np.arange(len(s)), -s))
    return _ap(y[order])


def aupr_tie_range(scores, labels=None) -> tuple[float, float]:
    """Average precision with ties resolved negatives-first and positives-first."""
    s, y = _unpack(scores, labels)
    if y.sum() == 0:
        raise UndefinedMetricError("AUPR needs at least one positive")
    lo = _ap(y[np.lexsort((y, -s))])
    hi = _ap(y[np.lexsort((-y, -s))])
    return lo, hi


def growth_rate(baseline: float, meta: float) -> float:
    """Relative improvement (meta - baseline) / baseline."""
    if baseline == 0:
        raise UndefinedMetricError("growth rate undefined for a zero baseline")
    return (meta - baseline) / baseline


def moving_average(values: Sequence[float], period: int = 2) -> list[float | None]:
    """Trailing moving average; the first ``period - 1`` entries are None."""
    out: list[float | None] = []
    for i in range(len(values)):
        if i + 1 < period:
            out.append(None)
        else:
            out.append(sum(values[i + 1 - period:i + 1]) / period)
    return out


def auroc_pairwise(scores, labels) -> Fraction:
    """O(P*N) pair-counting reference."""
    pos = [float(v) for v, t in zip(scores, labels) if t == 1]
    neg = [float(v) for v, t in zip(scores, labels) if t == 0]
    wins = sum(2 if p > n else 1 if p == n else 0 for p in pos for n in neg)
    return Fraction(wins, 2 * len(pos) * len(neg))


def average_precision_by_hand(scores: Iterable[float], labels: Iterable[int]) -> Fraction:
    """Precision at each positive's rank, rank from pairwise comparisons (ties: earlier first)."""
    s = list(scores)
    y = list(labels)
    total = Fraction(0)
    for i in range(len(s)):
        if y[i] != 1:
            continue
        ahead = [j for j in range(len(s)) if s[j] > s[i] or (s[j] == s[i] and j <= i)]
        total += Fraction(sum(y[j] for j in ahead), len(ahead))
    return total / sum(y)
