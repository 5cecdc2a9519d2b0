"""Classification metrics, overlap scores and the Wilcoxon rank-sum test."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # rows = truth, cols = prediction

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    degenerate: bool = False

    def as_tuple(self) -> tuple[float, float, float, float]:
        return self.accuracy, self.precision, self.recall, self.f1

    def format(self) -> str:
        return ",".join(f"{v:.6f}" for v in self.as_tuple())


METRIC_NAMES = ("accuracy", "precision", "recall", "f1")


def _ratio(num: float, den: float) -> tuple[float, bool]:
    return (num / den, False) if den > 0 else (0.0, True)


def _prf(tp: float, fp: float, fn: float) -> tuple[float, float, float, bool]:
    p, dp = _ratio(tp, tp + fp)
    r, dr = _ratio(tp, tp + fn)
    f, df = _ratio(2 * p * r, p + r)
    return p, r, f, dp or dr or df


def classification_metrics(truth: Sequence[int], predicted: Sequence[int], positive_class: int | None = 1,
                           n_classes: int | None = None) -> tuple[Metrics, ConfusionMatrix]:
    """Accuracy, precision, recall, F1.

    With ``positive_class`` set the last three refer to that class; with
    ``positive_class=None`` they are macro-averaged over classes and F1 is the
    harmonic mean of the macro precision and recall. Zero denominators give 0
    and set ``degenerate``.
    """
    truth = np.asarray(truth, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if len(truth) != len(predicted):
        raise MetricsError(f"length mismatch: {len(truth)} truths vs {len(predicted)} predictions")
    if len(truth) == 0:
        raise MetricsError("no samples to score")
    k = max(int(truth.max()), int(predicted.max()), positive_class or 0) + 1
    k = max(k, n_classes or 0)
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (truth, predicted), 1)
    accuracy = float(np.trace(counts) / counts.sum())
    if positive_class is not None:
        tp = counts[positive_class, positive_class]
        fp = counts[:, positive_class].sum() - tp
        fn = counts[positive_class].sum() - tp
        p, r, f, degenerate = _prf(tp, fp, fn)
    else:
        ps, rs, degenerate = [], [], False
        for c in range(k):
            tp = counts[c, c]
            pc, dp = _ratio(tp, counts[:, c].sum())
            rc, dr = _ratio(tp, counts[c].sum())
            ps.append(pc)
            rs.append(rc)
            degenerate |= dp or dr
        p, r = float(np.mean(ps)), float(np.mean(rs))
        f, df = _ratio(2 * p * r, p + r)
        degenerate |= df
    return Metrics(accuracy, float(p), float(r), float(f), bool(degenerate)), ConfusionMatrix(counts)


# overlap ----------------------------------------------------------------------


@dataclass(frozen=True)
class Overlap:
    dice: float
    iou: float
    both_empty: bool


def overlap(x, y) -> Overlap:
    """Dice and IoU of two boolean masks. Two empty masks count as perfect agreement."""
    x = np.asarray(x, dtype=bool)
    y = np.asarray(y, dtype=bool)
    if x.shape != y.shape:
        raise MetricsError(f"mask shapes differ: {x.shape} vs {y.shape}")
    inter = int(np.count_nonzero(x & y))
    sx, sy = int(np.count_nonzero(x)), int(np.count_nonzero(y))
    if sx + sy == 0:
        return Overlap(1.0, 1.0, True)
    union = sx + sy - inter
    return Overlap(2.0 * inter / (sx + sy), inter / union, False)


def dice(x, y) -> float:
    return overlap(x, y).dice


def iou(x, y) -> float:
    return overlap(x, y).iou


def dice_from_iou(j: float) -> float:
    return 2.0 * j / (1.0 + j)


# Wilcoxon rank-sum ----------------------------------------------------------------

EXACT_MAX_N = 20


@dataclass(frozen=True)
class RankSumResult:
    statistic: float  # z score of sample one's rank sum, positive when it ranks high
    p_value: float
    method: str  # "exact" or "normal"
    rank_sum: float = 0.0


def midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def rank_sum_distribution(n_a: int, n: int) -> list[int]:
    """Counts of subsets of size ``n_a`` from ranks 1..n, indexed by rank sum."""
    max_sum = sum(range(n - n_a + 1, n + 1))
    # ways[j][s]: subsets of size j with sum s over the ranks seen so far
    ways = [[0] * (max_sum + 1) for _ in range(n_a + 1)]
    ways[0][0] = 1
    for r in range(1, n + 1):
        for j in range(min(r, n_a), 0, -1):
            row, prev = ways[j], ways[j - 1]
            for s in range(max_sum, r - 1, -1):
                if prev[s - r]:
                    row[s] += prev[s - r]
    return ways[n_a]


def wilcoxon_ranksum(a: Sequence[float], b: Sequence[float]) -> RankSumResult:
    """Two-sided rank-sum test of ``a`` against ``b``.

    Exact null distribution when the pooled size is at most 20 and there are no
    ties; otherwise the normal approximation with tie-corrected variance and a
    0.5 continuity correction.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise MetricsError("both samples must be non-empty")
    n_a, n_b = len(a), len(b)
    n = n_a + n_b
    pooled = np.concatenate([a, b])
    ranks = midranks(pooled)
    w = float(ranks[:n_a].sum())
    expected = n_a * (n + 1) / 2.0
    _, tie_sizes = np.unique(pooled, return_counts=True)
    ties = float(((tie_sizes.astype(np.float64) ** 3) - tie_sizes).sum())
    variance = n_a * n_b / 12.0 * ((n + 1) - ties / (n * (n - 1))) if n > 1 else 0.0

    if n <= EXACT_MAX_N and ties == 0:
        dist = rank_sum_distribution(n_a, n)
        total = math.comb(n, n_a)
        ws = int(round(w))
        lower = sum(dist[: ws + 1]) / total
        upper = sum(dist[ws:]) / total
        z = (w - expected) / math.sqrt(variance) if variance > 0 else 0.0
        return RankSumResult(z, min(1.0, 2.0 * min(lower, upper)), "exact", w)

    if variance <= 0:
        return RankSumResult(0.0, 1.0, "normal", w)
    diff = w - expected
    corrected = max(abs(diff) - 0.5, 0.0)
    z = math.copysign(corrected, diff) / math.sqrt(variance)
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return RankSumResult(z, min(1.0, p), "normal", w)
