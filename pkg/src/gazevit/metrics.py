"""Classification metrics: accuracy, macro F1, macro one-vs-rest AUC."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata


class DegenerateAUC(UserWarning):
    """A class had no positives or no negatives and was left out of the AUC mean."""


@dataclass
class Metrics:
    acc: float
    f1: float
    auc: float | None  # None marks an undefined AUC
    per_class: list[dict] = field(default_factory=list)

    def as_row(self) -> dict:
        return {"acc": self.acc, "f1": self.f1, "auc": self.auc}


def fmt(value: float | None) -> str:
    """CSV cell for a metric; undefined values become ``NA``."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "NA"
    return repr(float(value))


def binary_auc(scores: np.ndarray, positive: np.ndarray) -> float:
    """Mann-Whitney rank statistic; tied pairs count one half."""
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    ranks = rankdata(scores, method="average")
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def compute_metrics(scores, labels, num_classes: int | None = None) -> Metrics:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or len(scores) != len(labels) or len(labels) == 0:
        raise ValueError("scores must be (n, C) with n == len(labels) > 0")
    C = scores.shape[1] if num_classes is None else num_classes
    pred = np.argmax(scores, axis=1)  # first maximum wins ties
    acc = float(np.mean(pred == labels))

    per_class, f1s, aucs = [], [], []
    for c in range(C):
        tp = int(np.sum((pred == c) & (labels == c)))
        fp = int(np.sum((pred == c) & (labels != c)))
        fn = int(np.sum((pred != c) & (labels == c)))
        support = tp + fn
        row = {"class": c, "support": support, "tp": tp, "fp": fp, "fn": fn}
        if support > 0:
            row["recall"] = tp / support
            row["f1"] = 2 * tp / (2 * tp + fp + fn)
            f1s.append(row["f1"])
        positive = labels == c
        if 0 < positive.sum() < len(labels):
            row["auc"] = binary_auc(scores[:, c], positive)
            aucs.append(row["auc"])
        else:
            row["auc"] = None
            warnings.warn(f"class {c}: AUC undefined, excluded from macro mean", DegenerateAUC, stacklevel=2)
        per_class.append(row)

    return Metrics(
        acc=acc,
        f1=float(np.mean(f1s)),
        auc=float(np.mean(aucs)) if aucs else None,
        per_class=per_class,
    )
