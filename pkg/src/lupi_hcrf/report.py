"""Accuracy and confusion-matrix summaries of a set of predictions."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np


@dataclass(eq=False)
class EvalReport:
    """Rows of ``confusion`` are true labels, columns are predicted labels."""

    labels: list[str]
    confusion: np.ndarray
    accuracy: float
    per_class_accuracy: np.ndarray

    @property
    def n_samples(self) -> int:
        return int(self.confusion.sum())

    def confusion_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["true\\predicted", *self.labels])
        for name, row in zip(self.labels, self.confusion):
            writer.writerow([name, *(int(v) for v in row)])
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"samples: {self.n_samples}", f"accuracy: {self.accuracy:.4f}"]
        for name, acc in zip(self.labels, self.per_class_accuracy):
            shown = "n/a" if np.isnan(acc) else f"{acc:.4f}"
            lines.append(f"  {name}: {shown}")
        return "\n".join(lines)


def evaluate(true, predicted, labels) -> EvalReport:
    """Build a report from integer label indices into ``labels``.

    Per-class accuracy is the diagonal over the row total; classes with no
    true samples get NaN.
    """
    true = np.asarray(true, dtype=int)
    predicted = np.asarray(predicted, dtype=int)
    if true.shape != predicted.shape or true.ndim != 1:
        raise ValueError("true and predicted must be equal-length vectors")
    if true.size == 0:
        raise ValueError("nothing to evaluate")
    n = len(labels)
    if true.min() < 0 or predicted.min() < 0 or max(true.max(), predicted.max()) >= n:
        raise ValueError("label index out of range")
    confusion = np.zeros((n, n), dtype=int)
    np.add.at(confusion, (true, predicted), 1)
    totals = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(totals > 0, np.diag(confusion) / np.maximum(totals, 1), np.nan)
    acc = float(np.trace(confusion) / true.size)
    return EvalReport(list(labels), confusion, acc, per_class)
