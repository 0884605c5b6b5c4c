"""Evaluation metrics computed from the confusion matrix.

Per-class average accuracy is the unweighted mean of per-class recalls,
which stays informative under target label imbalance where plain accuracy
is dominated by majority classes. Classes absent from the evaluation set
are excluded from macro averages and counted separately.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray,
                     num_classes: int) -> np.ndarray:
    """Counts[i, j] = examples of true class i predicted as class j.

    Args:
        y_true: ground-truth labels, shape (n,)
        y_pred: predicted labels, shape (n,)
        num_classes: size of the label space

    Returns:
        (num_classes, num_classes) integer matrix.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"label arrays differ: {y_true.shape} vs {y_pred.shape}")
    if len(y_true) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


@dataclass
class EvalMetrics:
    """Accuracy, per-class recalls, and macro/weighted summary scores."""

    accuracy: float
    per_class_average_accuracy: float
    per_class_recall: dict[int, float]
    macro_f1: float
    weighted_f1: float
    macro_precision: float
    weighted_precision: float
    macro_recall: float
    weighted_recall: float
    present_classes: int
    absent_classes: int

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "per_class_recall"}
        d["per_class_recall"] = {str(k): v for k, v in self.per_class_recall.items()}
        return d


def evaluate_predictions(y_true: np.ndarray, y_pred: np.ndarray,
                         num_classes: int) -> EvalMetrics:
    """Compute all evaluation measures from one pass over the confusion matrix.

    Macro scores average over classes present in the evaluation set; the
    weighted variants weight each present class by its support.
    """
    cm = confusion_matrix(y_true, y_pred, num_classes)
    total = cm.sum()
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    diag = np.diag(cm)

    present = support > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        recall = np.where(present, diag / np.maximum(support, 1), np.nan)
        precision = np.where(predicted > 0, diag / np.maximum(predicted, 1), 0.0)
        f1 = np.where(precision + recall > 0,
                      2 * precision * recall / np.maximum(precision + recall, 1e-300),
                      0.0)

    weights = support[present] / total
    metrics = EvalMetrics(
        accuracy=float(diag.sum() / total),
        per_class_average_accuracy=float(np.mean(recall[present])),
        per_class_recall={int(c): float(recall[c]) for c in np.flatnonzero(present)},
        macro_f1=float(np.mean(f1[present])),
        weighted_f1=float(np.sum(f1[present] * weights)),
        macro_precision=float(np.mean(precision[present])),
        weighted_precision=float(np.sum(precision[present] * weights)),
        macro_recall=float(np.mean(recall[present])),
        weighted_recall=float(np.sum(recall[present] * weights)),
        present_classes=int(present.sum()),
        absent_classes=int(num_classes - present.sum()),
    )
    return metrics
