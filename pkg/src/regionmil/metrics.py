"""Detection rates, ROC sweep with AUC and TPR@FPR, average precision, and
stratified k-fold splits."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .infer import Verdict


def detection_rates(
    verdicts: Sequence[tuple[str, Verdict]]
) -> tuple[float | None, float | None, float | None]:
    """(positive rate, negative rate, overall rate) from (true label, verdict) pairs.

    A class rate is None when that class is absent, never 0.
    """
    if not verdicts:
        raise ValueError("detection_rates needs at least one verdict")
    tp = sum(1 for lab, v in verdicts if lab == "pos" and v.label == "pos")
    tn = sum(1 for lab, v in verdicts if lab == "neg" and v.label == "neg")
    p = sum(1 for lab, _ in verdicts if lab == "pos")
    n = len(verdicts) - p
    rate_pos = tp / p if p else None
    rate_neg = tn / n if n else None
    rate_all = (tp + tn) / (p + n)
    return rate_pos, rate_neg, rate_all


@dataclass
class RocResult:
    points: list[tuple[float, float]]  # (fpr, tpr), starting at (0, 0)
    auc: float
    tpr_at_fpr: dict[float, float]
    thresholds: list[float]  # aligned with points; +inf for the origin


def roc(scored: Sequence[tuple[str, float]], fpr_targets: Sequence[float] = ()) -> RocResult:
    """Threshold sweep over distinct scores, descending, with ties grouped.

    Each point reports (FPR, TPR) of the rule score >= threshold.  AUC by
    the trapezoid rule.  TPR@FPR is the step-function value: the highest
    TPR whose FPR does not exceed the target (no interpolation).

    Raises:
        ValueError: non-finite scores or a single-class input.
    """
    if not scored:
        raise ValueError("roc needs at least one scored item")
    labels = np.array([1 if lab == "pos" else 0 for lab, _ in scored])
    scores = np.array([s for _, s in scored], dtype=np.float64)
    if not np.isfinite(scores).all():
        raise ValueError("roc requires finite scores")
    p = int(labels.sum())
    n = len(labels) - p
    if p == 0 or n == 0:
        raise ValueError("roc requires both classes present")

    order = np.argsort(-scores, kind="stable")
    points = [(0.0, 0.0)]
    thresholds = [math.inf]
    tp = fp = 0
    i = 0
    while i < len(order):
        t = scores[order[i]]
        j = i
        while j < len(order) and scores[order[j]] == t:
            if labels[order[j]]:
                tp += 1
            else:
                fp += 1
            j += 1
        points.append((fp / n, tp / p))
        thresholds.append(float(t))
        i = j

    auc = 0.0
    for (f0, t0), (f1, t1) in zip(points, points[1:]):
        auc += (f1 - f0) * (t0 + t1) / 2.0

    tpr_at = {}
    for target in fpr_targets:
        best = 0.0
        for f, t in points:
            if f <= target:
                best = max(best, t)
        tpr_at[float(target)] = best
    return RocResult(points=points, auc=auc, tpr_at_fpr=tpr_at, thresholds=thresholds)


def mean_average_precision(scored: Sequence[tuple[str, float]]) -> float:
    """Average precision of the descending-score ranking.

    Mean over positive ranks of precision-at-rank; ties keep input order.

    Raises:
        ValueError: when no positives are present.
    """
    scores = np.array([s for _, s in scored], dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    precisions = []
    hits = 0
    for rank, idx in enumerate(order, start=1):
        if scored[idx][0] == "pos":
            hits += 1
            precisions.append(hits / rank)
    if not precisions:
        raise ValueError("mean_average_precision needs at least one positive")
    return sum(precisions) / len(precisions)


def kfold_split(
    labels: Sequence[str], k: int, seed: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    """k stratified (train, validation) index splits, deterministic by seed.

    Each class is shuffled once and dealt round-robin so fold label
    proportions match the corpus within one item.

    Raises:
        ValueError: k < 2 or k exceeding a class size.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    labels = list(labels)
    rng = np.random.default_rng(seed)
    fold_members: list[list[int]] = [[] for _ in range(k)]
    for cls in sorted(set(labels)):
        idx = np.array([i for i, lab in enumerate(labels) if lab == cls])
        if k > len(idx):
            raise ValueError(f"k={k} exceeds class {cls!r} size {len(idx)}")
        for j, item in enumerate(rng.permutation(idx)):
            fold_members[j % k].append(int(item))
    splits = []
    everything = set(range(len(labels)))
    for members in fold_members:
        val = np.array(sorted(members), dtype=np.int64)
        train = np.array(sorted(everything - set(members)), dtype=np.int64)
        splits.append((train, val))
    return splits


@dataclass
class MetricsReport:
    """Evaluation summary; fields are None when undefined for the input."""

    detection_rate_pos: float | None
    detection_rate_neg: float | None
    detection_rate_all: float | None
    roc_points: list[tuple[float, float]] | None
    auc: float | None
    tpr_at_fpr: dict[float, float] = field(default_factory=dict)
    map_score: float | None = None

    def to_json(self) -> str:
        payload = {
            "detection_rate_pos": self.detection_rate_pos,
            "detection_rate_neg": self.detection_rate_neg,
            "detection_rate_all": self.detection_rate_all,
            "roc_points": self.roc_points,
            "auc": self.auc,
            "tpr_at_fpr": {repr(k): v for k, v in self.tpr_at_fpr.items()},
            "map_score": self.map_score,
        }
        return json.dumps(payload, sort_keys=True, indent=2)
