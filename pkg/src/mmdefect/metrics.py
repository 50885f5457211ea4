"""Confusion-matrix classification metrics: per-class precision/recall/f1
and their unweighted (macro) mean."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted."""
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    if y_true.shape != y_pred.shape:
        raise ValueError("label arrays differ in length")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def precision_recall_f1(cm: np.ndarray, cls: int) -> tuple[float, float, float]:
    """One-vs-rest precision, recall, and f1 = 2PR/(P+R); 0 when degenerate."""
    cm = np.asarray(cm)
    tp = float(cm[cls, cls])
    predicted = float(cm[:, cls].sum())
    support = float(cm[cls, :].sum())
    precision = tp / predicted if predicted > 0 else 0.0
    recall = tp / support if support > 0 else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def f1_per_class(cm: np.ndarray, cls: int) -> float:
    return precision_recall_f1(cm, cls)[2]


def macro_f1(scores) -> float:
    scores = list(scores)
    if not scores:
        raise ValueError("macro f1 of an empty class list")
    return float(np.mean(scores))


def to_binary(labels) -> np.ndarray:
    """Collapse classes {1..k} onto a single defective class 1."""
    return (np.asarray(labels, dtype=int) != 0).astype(int)


@dataclass
class MetricsReport:
    task: str
    confusion: np.ndarray
    precision: list[float]
    recall: list[float]
    f1: list[float]
    macro_f1: float
    support: list[int]

    @classmethod
    def from_predictions(cls, y_true, y_pred, n_classes: int, task: str = "multi") -> "MetricsReport":
        if task == "binary":
            y_true, y_pred, n_classes = to_binary(y_true), to_binary(y_pred), 2
        cm = confusion_matrix(y_true, y_pred, n_classes)
        triples = [precision_recall_f1(cm, c) for c in range(n_classes)]
        return cls(task=task, confusion=cm,
                   precision=[t[0] for t in triples],
                   recall=[t[1] for t in triples],
                   f1=[t[2] for t in triples],
                   macro_f1=macro_f1(t[2] for t in triples),
                   support=cm.sum(axis=1).tolist())

    def rows(self):
        for c in range(len(self.f1)):
            yield {"task": self.task, "class": c, "precision": self.precision[c],
                   "recall": self.recall[c], "f1": self.f1[c]}

    def summary(self) -> dict:
        return {"task": self.task, "macro_f1": self.macro_f1,
                "per_class_f1": self.f1, "support": self.support,
                "confusion": self.confusion.tolist()}
