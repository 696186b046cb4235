"""Confusion matrices and classification metrics.

Headline precision/recall/F1 are macro-averaged (unweighted mean over
classes); the averaging convention is stamped into every export. Zero
denominators yield 0 with an "undefined" annotation kept per class.
"""
from __future__ import annotations

import io
import json
import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass
class ConfusionMatrix:
    """Counts with rows = true class, columns = predicted class."""

    counts: np.ndarray  # (K, K) int64
    class_names: list[str]

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.class_names)
        if self.counts.shape != (k, k):
            raise ValueError(f"matrix shape {self.counts.shape} does not match {k} classes")
        if np.any(self.counts < 0):
            raise ValueError("confusion matrix entries must be nonnegative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class ClassMetrics:
    name: str
    precision: float
    recall: float
    f1: float
    support: int  # true examples of this class (row sum)
    precision_undefined: bool
    recall_undefined: bool


@dataclass
class MetricsReport:
    accuracy: float
    per_class: list[ClassMetrics]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    total: int
    averaging: str = "macro"


def confusion_matrix(truths: list[str], preds: list[str], class_names: list[str]) -> ConfusionMatrix:
    if len(truths) != len(preds):
        raise DataError(f"length mismatch: {len(truths)} truths vs {len(preds)} predictions")
    index = {name: i for i, name in enumerate(class_names)}
    k = len(class_names)
    counts = np.zeros((k, k), dtype=np.int64)
    for t, p in zip(truths, preds):
        if t not in index:
            raise DataError(f"unknown true label {t!r}")
        if p not in index:
            raise DataError(f"unknown predicted label {p!r}")
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(counts=counts, class_names=list(class_names))


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    counts = cm.counts
    total = cm.total
    accuracy = float(np.trace(counts)) / total if total else 0.0
    per_class = []
    for c, name in enumerate(cm.class_names):
        tp = int(counts[c, c])
        col = int(counts[:, c].sum())
        row = int(counts[c, :].sum())
        p_undef = col == 0
        r_undef = row == 0
        precision = 0.0 if p_undef else tp / col
        recall = 0.0 if r_undef else tp / row
        f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
        per_class.append(ClassMetrics(name=name, precision=precision, recall=recall, f1=f1,
                                      support=row, precision_undefined=p_undef, recall_undefined=r_undef))
    k = len(cm.class_names)
    return MetricsReport(
        accuracy=accuracy,
        per_class=per_class,
        macro_precision=sum(m.precision for m in per_class) / k,
        macro_recall=sum(m.recall for m in per_class) / k,
        macro_f1=sum(m.f1 for m in per_class) / k,
        total=total,
    )


def per_class_flags(report: MetricsReport, threshold: float) -> list[str]:
    """Classes with F1 below the threshold, worst first."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must be in [0, 1]")
    flagged = [m for m in report.per_class if m.f1 < threshold]
    flagged.sort(key=lambda m: m.f1)
    return [m.name for m in flagged]


def report_to_dict(report: MetricsReport) -> dict:
    return {
        "averaging": report.averaging,
        "accuracy": report.accuracy,
        "macro_precision": report.macro_precision,
        "macro_recall": report.macro_recall,
        "macro_f1": report.macro_f1,
        "total": report.total,
        "per_class": [
            {
                "class": m.name,
                "precision": m.precision,
                "recall": m.recall,
                "f1": m.f1,
                "support": m.support,
                "precision_undefined": m.precision_undefined,
                "recall_undefined": m.recall_undefined,
            }
            for m in report.per_class
        ],
    }


def report_to_json(report: MetricsReport) -> str:
    return json.dumps(report_to_dict(report), indent=2) + "\n"


def report_to_csv(report: MetricsReport) -> str:
    """One row per class plus a macro summary row (UTF-8, LF)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["class", "precision", "recall", "f1", "support"])
    for m in report.per_class:
        writer.writerow([m.name, repr(m.precision), repr(m.recall), repr(m.f1), m.support])
    writer.writerow(["macro", repr(report.macro_precision), repr(report.macro_recall),
                     repr(report.macro_f1), report.total])
    return buf.getvalue()


def confusion_to_csv(cm: ConfusionMatrix) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["true\\predicted", *cm.class_names])
    for name, row in zip(cm.class_names, cm.counts):
        writer.writerow([name, *(int(v) for v in row)])
    return buf.getvalue()
