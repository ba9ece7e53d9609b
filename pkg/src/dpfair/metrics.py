"""Task scores, per-group evaluation, and the best-vs-worst group gap."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .models import Model, ModelParams, predict_batch

__all__ = [
    "GroupScores",
    "DisparityReport",
    "accuracy",
    "f1_binary",
    "mse",
    "evaluate_groups",
    "group_disparity",
]

METRIC_KINDS = ("accuracy", "f1", "mse")


@dataclass
class GroupScores:
    """One metric value per group, with its orientation."""

    per_group: np.ndarray
    metric_kind: str
    higher_is_better: bool

    def __post_init__(self):
        self.per_group = np.asarray(self.per_group, dtype=np.float64)
        if self.per_group.ndim != 1 or self.per_group.size == 0:
            raise ValueError("per_group must be a non-empty vector")
        if not np.all(np.isfinite(self.per_group)):
            raise ValueError("group scores must be finite")


@dataclass(frozen=True)
class DisparityReport:
    """Absolute gap between the best- and worst-scoring group."""

    delta: float
    best_group: int
    worst_group: int


def _check_pair(predictions, targets):
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1:
        raise ValueError("predictions and targets must be equal-length vectors")
    if p.size == 0:
        raise ValueError("empty input")
    return p, t


def accuracy(predictions, labels) -> float:
    p, t = _check_pair(predictions, labels)
    return float(np.mean(p == t))


def f1_binary(predictions, labels) -> float:
    """Positive-class F1; 0 when precision + recall is 0."""
    p, t = _check_pair(predictions, labels)
    tp = float(np.sum((p == 1) & (t == 1)))
    fp = float(np.sum((p == 1) & (t == 0)))
    fn = float(np.sum((p == 0) & (t == 1)))
    denom = 2 * tp + fp + fn
    if denom == 0.0:
        return 0.0
    return 2 * tp / denom


def mse(predictions, targets) -> float:
    p, t = _check_pair(predictions, targets)
    return float(np.mean((p - t) ** 2))


_METRIC_FNS = {"accuracy": accuracy, "f1": f1_binary, "mse": mse}


def evaluate_groups(
    model: Model, params: ModelParams, dataset: Dataset, metric_kind: str
) -> GroupScores:
    """Compute the metric independently on each group's slice of the dataset."""
    if metric_kind not in _METRIC_FNS:
        raise ValueError(f"unknown metric {metric_kind!r}")
    fn = _METRIC_FNS[metric_kind]
    preds = predict_batch(model, params, dataset)
    labels = dataset.labels_array
    groups = dataset.groups_array
    scores = np.empty(dataset.num_groups)
    for g in range(dataset.num_groups):
        mask = groups == g
        if not mask.any():
            raise ValueError(f"group {g} is empty in the evaluation split")
        scores[g] = fn(preds[mask], labels[mask])
    return GroupScores(scores, metric_kind, higher_is_better=metric_kind != "mse")


def group_disparity(scores: GroupScores) -> DisparityReport:
    """max - min of the per-group scores; ties resolve to the lowest group id."""
    vals = scores.per_group
    hi = int(np.argmax(vals))
    lo = int(np.argmin(vals))
    delta = float(vals[hi] - vals[lo])
    if scores.higher_is_better:
        best, worst = hi, lo
    else:
        best, worst = lo, hi
    return DisparityReport(delta=delta, best_group=best, worst_group=worst)
