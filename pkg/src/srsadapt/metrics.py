"""Classification evaluation: confusion matrices, per-class precision /
recall / F1, accuracy, macro and support-weighted F1, and the
majority-class baseline.

Macro-F1 averages over *all* schema classes, so classes absent from the
evaluation set contribute zero; weighted-F1 weights each class by its
share of the evaluated examples.  Zero-denominator precision or recall is
defined as 0 and flagged as degenerate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MetricsError(ValueError):
    """Malformed labels or an empty evaluation set."""


@dataclass
class ConfusionMatrix:
    classes: tuple[str, ...]
    counts: np.ndarray  # (C, C) int64; rows = ground truth, cols = prediction

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def support(self, cls: str) -> int:
        return int(self.counts[self.classes.index(cls)].sum())


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int
    degenerate_precision: bool = False
    degenerate_recall: bool = False


@dataclass
class MetricsReport:
    accuracy: float
    macro_f1: float
    weighted_f1: float
    per_class: dict[str, ClassMetrics]

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "per_class": {
                cls: {
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                    "support": m.support,
                }
                for cls, m in self.per_class.items()
            },
        }


def confusion_matrix(truth, predictions, classes) -> ConfusionMatrix:
    truth = list(truth)
    predictions = list(predictions)
    if len(truth) != len(predictions):
        raise MetricsError(
            f"{len(truth)} ground-truth labels but {len(predictions)} predictions"
        )
    classes = tuple(classes)
    index = {cls: i for i, cls in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(truth, predictions):
        if t not in index:
            raise MetricsError(f"unknown ground-truth label {t!r}")
        if p not in index:
            raise MetricsError(f"unknown predicted label {p!r}")
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(classes, counts)


def per_class_metrics(cm: ConfusionMatrix) -> dict[str, ClassMetrics]:
    col_sums = cm.counts.sum(axis=0)
    row_sums = cm.counts.sum(axis=1)
    out: dict[str, ClassMetrics] = {}
    for i, cls in enumerate(cm.classes):
        tp = int(cm.counts[i, i])
        deg_p = col_sums[i] == 0
        deg_r = row_sums[i] == 0
        precision = 0.0 if deg_p else tp / int(col_sums[i])
        recall = 0.0 if deg_r else tp / int(row_sums[i])
        f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
        out[cls] = ClassMetrics(
            precision=precision,
            recall=recall,
            f1=f1,
            support=int(row_sums[i]),
            degenerate_precision=bool(deg_p),
            degenerate_recall=bool(deg_r),
        )
    return out


def summarize(cm: ConfusionMatrix) -> MetricsReport:
    n = cm.total
    if n == 0:
        raise MetricsError("cannot summarize an empty confusion matrix")
    per_class = per_class_metrics(cm)
    accuracy = float(np.trace(cm.counts)) / n
    f1s = [per_class[cls].f1 for cls in cm.classes]
    macro_f1 = float(np.mean(f1s))
    weighted_f1 = float(
        sum(per_class[cls].support / n * per_class[cls].f1 for cls in cm.classes)
    )
    return MetricsReport(accuracy, macro_f1, weighted_f1, per_class)


def evaluate_predictions(truth, predictions, classes) -> MetricsReport:
    return summarize(confusion_matrix(truth, predictions, classes))


METRIC_NAMES = ("accuracy", "macro_f1", "weighted_f1")


def metric_value(report: MetricsReport, metric: str) -> float:
    if metric not in METRIC_NAMES:
        raise MetricsError(f"unknown metric {metric!r}; choose one of {METRIC_NAMES}")
    return getattr(report, metric)


@dataclass
class MajorityClassifier:
    """Predicts the most frequent training class; ties break by class order."""

    prediction: str

    def predict(self, documents) -> list[str]:
        return [self.prediction] * len(documents)


def majority_classifier(train_labels, classes) -> MajorityClassifier:
    train_labels = list(train_labels)
    if not train_labels:
        raise MetricsError("majority classifier needs at least one training label")
    classes = tuple(classes)
    counts = {cls: 0 for cls in classes}
    for label in train_labels:
        if label not in counts:
            raise MetricsError(f"unknown training label {label!r}")
        counts[label] += 1
    best = max(classes, key=lambda cls: (counts[cls], -classes.index(cls)))
    return MajorityClassifier(best)


# ---------------------------------------------------------------------------
# prediction files: line-delimited (id, truth, prediction)
# ---------------------------------------------------------------------------


def save_predictions(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id, truth, pred in rows:
            fh.write(f"{doc_id}\t{truth}\t{pred}\n")


def load_predictions(path) -> list[tuple[str, str, str]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise MetricsError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            rows.append((parts[0], parts[1], parts[2]))
    return rows
