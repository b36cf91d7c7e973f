"""Binary classification metrics with CGI (label 1) as the positive class."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

REPORT_COLUMNS = ("accuracy", "precision", "recall", "f1", "auc")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # thresholds[0] is +inf (nothing predicted positive)
    auc: float

    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))


@dataclass
class EvalReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float
    confusion: ConfusionMatrix
    roc: RocCurve

    def row(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in REPORT_COLUMNS}

    def rounded(self) -> dict[str, str]:
        return {k: format_2dp(v) for k, v in self.row().items()}


def _validate(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.size == 0:
        raise ValueError("no samples to evaluate")
    if scores.shape != labels.shape:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} differ in length")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 (real) or 1 (cgi)")
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    return scores, labels.astype(np.int64)


def confusion(scores, labels, threshold: float = 0.5) -> ConfusionMatrix:
    """Predicted positive iff ``score >= threshold``."""
    scores, labels = _validate(scores, labels)
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    pred = scores >= threshold
    pos = labels == 1
    return ConfusionMatrix(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    return (cm.tp + cm.tn) / cm.total


def precision_recall_f1(cm: ConfusionMatrix) -> tuple[float, float, float]:
    """Zero denominators give 0 rather than NaN."""
    precision = cm.tp / (cm.tp + cm.fp) if cm.tp + cm.fp else 0.0
    recall = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn else 0.0
    f1 = f1_from(precision, recall)
    return precision, recall, f1


def f1_from(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def roc_auc(scores, labels) -> RocCurve:
    """ROC over unique score thresholds (descending) and trapezoidal AUC.

    Tied scores move the curve diagonally in one step, which is what makes
    the area equal to the Mann-Whitney statistic with ties counted as 1/2.
    """
    scores, labels = _validate(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes present")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    last_of_group = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tps = np.cumsum(y)[last_of_group]
    fps = (last_of_group + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    thresholds = np.r_[np.inf, s[last_of_group]]
    # integer trapezoid sum keeps the area exact before the final division
    area2 = np.sum((fps[1:] - fps[:-1]) * (tps[1:] + tps[:-1])) + fps[0] * tps[0]
    auc = float(area2) / (2.0 * n_pos * n_neg)
    return RocCurve(fpr, tpr, thresholds, auc)


def report_row(scores, labels, threshold: float = 0.5) -> EvalReport:
    cm = confusion(scores, labels, threshold)
    p, r, f1 = precision_recall_f1(cm)
    roc = roc_auc(scores, labels)
    return EvalReport(accuracy(cm), p, r, f1, roc.auc, cm, roc)


def round_half_away(x: float, places: int = 2) -> float:
    """Round half away from zero, tolerant of binary representation error."""
    q = 10**places
    scaled = abs(x) * q
    r = math.floor(scaled + 0.5 + 1e-9)
    return math.copysign(r / q, x)


def format_2dp(x: float) -> str:
    if isinstance(x, float) and not math.isfinite(x):
        return "nan"
    return f"{round_half_away(x, 2):.2f}"
