"""Classification metrics from a confusion matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


@dataclass
class MetricsReport:
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    macro_f1: float
    confusion: np.ndarray

    @classmethod
    def from_confusion(cls, cm) -> "MetricsReport":
        """Per-class P = TP/(TP+FP), R = TP/(TP+FN), F1 = 2PR/(P+R).

        An empty denominator gives 0 for that ratio, and F1 = 0 when P + R = 0.
        """
        cm = np.asarray(cm, dtype=np.int64)
        tp = np.diag(cm).astype(np.float64)
        pred_tot = cm.sum(axis=0).astype(np.float64)
        true_tot = cm.sum(axis=1).astype(np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            p = np.where(pred_tot > 0, tp / pred_tot, 0.0)
            r = np.where(true_tot > 0, tp / true_tot, 0.0)
            f1 = np.where(p + r > 0, 2 * p * r / (p + r), 0.0)
        total = cm.sum()
        acc = float(np.trace(cm) / total) if total else 0.0
        # sequential sum keeps macro-F1 reproducible bit for bit
        macro = sum(f1.tolist()) / len(f1)
        return cls(acc, p, r, f1, macro, cm)

    @classmethod
    def from_predictions(cls, y_true, y_pred, n_classes: int) -> "MetricsReport":
        return cls.from_confusion(confusion_matrix(y_true, y_pred, n_classes))

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "f1": self.f1.tolist(),
            "confusion": self.confusion.tolist(),
        }
