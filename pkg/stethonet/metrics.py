"""Discrimination, calibration and threshold selection for binary scores."""

import logging
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from sklearn.metrics import (
    accuracy_score,
    average_precision_score,
    f1_score,
    precision_recall_curve,
    precision_score,
    recall_score,
    roc_auc_score,
    roc_curve,
)

logger = logging.getLogger(__name__)

ECE_BINS = 15


@dataclass
class ReliabilityBin:
    lower: float
    upper: float
    count: int
    mean_probability: float
    positive_rate: float


@dataclass
class Calibration:
    ece: float
    brier: float
    bins: List[ReliabilityBin] = field(default_factory=list)


@dataclass
class EvalReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auroc: float
    auprc: float
    threshold: float
    calibration: Calibration
    roc_curve: List[List[float]] = field(default_factory=list)
    pr_curve: List[List[float]] = field(default_factory=list)
    n_patients: int = 0
    n_windows: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _check_binary(scores: Sequence[float], labels: Sequence[int]) -> tuple:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if s.shape != y.shape:
        raise ValueError(f"{len(s)} scores for {len(y)} labels")
    if len(np.unique(y)) < 2:
        raise ValueError("AUROC is undefined for a split with a single class")
    return s, y


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Area under the ROC curve; ties count one half."""
    s, y = _check_binary(scores, labels)
    return float(roc_auc_score(y, s))


def auprc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Step-wise area under the precision-recall curve (average precision)."""
    s, y = _check_binary(scores, labels)
    return float(average_precision_score(y, s))


def reliability_bins(probs: Sequence[float], labels: Sequence[int], n_bins: int = ECE_BINS) -> List[ReliabilityBin]:
    """Equal-width bins over [0, 1]; the last bin is closed on the right."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    index = np.minimum((p * n_bins).astype(np.int64), n_bins - 1)
    bins = []
    for b in range(n_bins):
        members = index == b
        count = int(members.sum())
        bins.append(ReliabilityBin(
            lower=float(edges[b]),
            upper=float(edges[b + 1]),
            count=count,
            mean_probability=float(p[members].mean()) if count else 0.0,
            positive_rate=float(y[members].mean()) if count else 0.0,
        ))
    return bins


def expected_calibration_error(probs: Sequence[float], labels: Sequence[int], n_bins: int = ECE_BINS) -> float:
    """Count-weighted mean |mean probability - positive rate| over the bins."""
    bins = reliability_bins(probs, labels, n_bins)
    total = sum(b.count for b in bins)
    if total == 0:
        return 0.0
    return float(sum(b.count * abs(b.mean_probability - b.positive_rate) for b in bins) / total)


def brier_score(probs: Sequence[float], labels: Sequence[int]) -> float:
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    return float(np.mean((p - y) ** 2))


def calibration(probs: Sequence[float], labels: Sequence[int], n_bins: int = ECE_BINS) -> Calibration:
    return Calibration(
        ece=expected_calibration_error(probs, labels, n_bins),
        brier=brier_score(probs, labels),
        bins=reliability_bins(probs, labels, n_bins),
    )


def select_threshold(scores: Sequence[float], labels: Sequence[int]) -> float:
    """
    Threshold maximizing F1 of (score >= t), searched over the distinct
    scores and 0.5. Ties go to the largest threshold.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    best_t, best_f1 = 0.5, -1.0
    for t in sorted(set(s.tolist()) | {0.5}):
        f1 = f1_score(y, (s >= t).astype(np.int64), zero_division=0)
        if f1 >= best_f1:
            best_t, best_f1 = float(t), f1
    logger.info(f"Selected threshold {best_t:.4f} (F1 {best_f1:.4f})")
    return best_t


def evaluate_scores(
    scores: Sequence[float],
    labels: Sequence[int],
    threshold: float = 0.5,
    patient_ids: Optional[Sequence[str]] = None,
) -> EvalReport:
    """
    Full report for positive-class probabilities at a frozen threshold.

    Raises:
        ValueError: single-class labels
    """
    s, y = _check_binary(scores, labels)
    if np.any((s < 0) | (s > 1)):
        raise ValueError("scores must be probabilities in [0, 1]")
    preds = (s >= threshold).astype(np.int64)
    fpr, tpr, _ = roc_curve(y, s)
    precision, recall, _ = precision_recall_curve(y, s)

    report = EvalReport(
        accuracy=float(accuracy_score(y, preds)),
        precision=float(precision_score(y, preds, zero_division=0)),
        recall=float(recall_score(y, preds, zero_division=0)),
        f1=float(f1_score(y, preds, zero_division=0)),
        auroc=float(roc_auc_score(y, s)),
        auprc=float(average_precision_score(y, s)),
        threshold=float(threshold),
        calibration=calibration(s, y),
        roc_curve=[[float(a), float(b)] for a, b in zip(fpr, tpr)],
        pr_curve=[[float(r), float(p)] for r, p in zip(recall, precision)],
        n_patients=len(set(patient_ids)) if patient_ids is not None else 0,
        n_windows=len(y),
    )
    logger.info(
        f"Eval: acc {report.accuracy:.3f} f1 {report.f1:.3f} auroc {report.auroc:.3f} "
        f"auprc {report.auprc:.3f} ece {report.calibration.ece:.3f}"
    )
    return report
