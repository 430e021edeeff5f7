"""Train/test splitting, confusion matrices, accuracy and one-vs-rest AUC.

.. warning::
   The default split shuffles rows, not individuals. After unrolling, one
   person's different years can land on both sides of the split, which leaks
   person-level information into the test score. Set
   ``SplitSpec.group_by_individual`` for a leakage-free estimate.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

from .features import N_CLASSES, DesignMatrix, class_distribution
from .learners.base import predict


@dataclass(frozen=True)
class SplitSpec:
    fraction: float = 0.8
    seed: int = 0
    group_by_individual: bool = False

    def __post_init__(self):
        if not 0 < self.fraction < 1:
            raise ValueError("train fraction must lie strictly between 0 and 1")


def percentage_split(n: int, spec: SplitSpec, groups: Sequence[int] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle, then the first ``round(n * fraction)`` rows train.

    In group mode whole groups (individuals) are taken in shuffled order
    until the train side reaches the target size, so sizes are approximate.
    Both index arrays come back sorted.
    """
    if n < 2:
        raise ValueError("need at least two rows to split")
    target = int(math.floor(n * spec.fraction + 0.5))
    rng = np.random.default_rng(spec.seed)
    if not spec.group_by_individual:
        order = rng.permutation(n)
        return np.sort(order[:target]), np.sort(order[target:])
    if groups is None:
        raise ValueError("group_by_individual needs the per-row individual ids")
    groups = np.asarray(groups)
    if len(groups) != n:
        raise ValueError("groups must have one entry per row")
    uniq, inverse = np.unique(groups, return_inverse=True)
    sizes = np.bincount(inverse)
    taken = np.zeros(len(uniq), dtype=bool)
    total = 0
    for g in rng.permutation(len(uniq)):
        if total >= target:
            break
        taken[g] = True
        total += sizes[g]
    train_mask = taken[inverse]
    if train_mask.all():
        raise ValueError("grouped split leaves no individual for the test side")
    return np.flatnonzero(train_mask), np.flatnonzero(~train_mask)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are actual classes, columns predicted classes."""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_list(self) -> list[list[int]]:
        return self.counts.astype(int).tolist()


def confusion(actual: Sequence[int], predicted: Sequence[int], n_classes: int = N_CLASSES) -> ConfusionMatrix:
    actual = np.asarray(actual, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if actual.shape != predicted.shape:
        raise ValueError("actual and predicted lengths differ")
    if actual.size == 0:
        raise ValueError("confusion of empty label vectors")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (actual - 1, predicted - 1), 1)
    return ConfusionMatrix(counts)


def accuracy(cm: ConfusionMatrix | np.ndarray) -> float:
    """Percentage of correctly classified instances."""
    counts = cm.counts if isinstance(cm, ConfusionMatrix) else np.asarray(cm)
    total = counts.sum()
    if total <= 0:
        raise ValueError("accuracy of an empty confusion matrix")
    return 100.0 * float(np.trace(counts)) / float(total)


def roc_auc_ovr(scores: Sequence[float], positives: Sequence[bool]) -> float:
    """Area under the ROC curve as the Mann-Whitney statistic.

    Tied positive/negative pairs count one half. NaN when only one class
    is present.
    """
    scores = np.asarray(scores, dtype=float)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = len(positives) - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    ranks = rankdata(scores)
    u = ranks[positives].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def weighted_auc(aucs: Sequence[float], prevalence: Sequence[float]) -> float:
    aucs = np.asarray(aucs, dtype=float)
    prevalence = np.asarray(prevalence, dtype=float)
    bad = np.isnan(aucs) & (prevalence > 0)
    if bad.any():
        raise ValueError(f"undefined AUC for class(es) {list(np.flatnonzero(bad) + 1)} with non-zero prevalence")
    used = prevalence > 0
    # normalising by the prevalence sum keeps a constant scorer at exactly 0.5
    return math.fsum(prevalence[used] * aucs[used]) / math.fsum(prevalence[used])


@dataclass(frozen=True)
class EvalReport:
    name: str
    accuracy: float
    class_auc: tuple[float, ...]
    weighted_auc: float
    confusion: ConfusionMatrix
    n_train: int
    n_test: int
    auc_undefined: bool = False
    test_index: np.ndarray = field(default=None, repr=False)
    predicted: np.ndarray = field(default=None, repr=False)
    scores: np.ndarray = field(default=None, repr=False)
    actual: np.ndarray = field(default=None, repr=False)

    def metric_rows(self) -> list[tuple[str, str]]:
        rows = [
            ("accuracy", repr(self.accuracy)),
            ("weighted_auc", repr(self.weighted_auc)),
            ("auc_undefined", str(int(self.auc_undefined))),
            ("n_train", str(self.n_train)),
            ("n_test", str(self.n_test)),
        ]
        rows += [(f"auc_class_{k + 1}", repr(a)) for k, a in enumerate(self.class_auc)]
        k = len(self.class_auc)
        rows += [
            (f"confusion_{a + 1}_{p + 1}", str(int(self.confusion.counts[a, p]))) for a in range(k) for p in range(k)
        ]
        return rows


def score_predictions(
    name: str,
    actual: np.ndarray,
    labels: np.ndarray,
    scores: np.ndarray,
    n_train: int,
    n_classes: int = N_CLASSES,
    test_index: np.ndarray | None = None,
) -> EvalReport:
    actual = np.asarray(actual, dtype=np.int64)
    cm = confusion(actual, labels, n_classes)
    aucs = tuple(roc_auc_ovr(scores[:, k], actual == k + 1) for k in range(n_classes))
    prevalence = class_distribution(actual, n_classes)
    try:
        wauc, undefined = weighted_auc(aucs, prevalence), False
    except ValueError:
        # single-class test side: report chance level and flag it
        wauc, undefined = 0.5, True
    return EvalReport(
        name, accuracy(cm), aucs, wauc, cm, n_train, len(actual), undefined, test_index, labels, scores, actual
    )


def evaluate_split(
    fit: Callable[[DesignMatrix], object],
    matrix: DesignMatrix,
    train: np.ndarray,
    test: np.ndarray,
    name: str = "model",
) -> EvalReport:
    if len(test) == 0:
        raise ValueError("empty test side")
    model = fit(matrix.take(train))
    test_m = matrix.take(test)
    labels, scores = predict(model, test_m)
    return score_predictions(name, test_m.targets, labels, scores, len(train), matrix.n_classes, np.asarray(test))


def evaluate(
    fit: Callable[[DesignMatrix], object],
    matrix: DesignMatrix,
    spec: SplitSpec,
    name: str = "model",
) -> EvalReport:
    """Fit on the train side of ``spec``'s split, score on the test side."""
    if len(matrix) == 0:
        raise ValueError("empty design matrix")
    train, test = percentage_split(len(matrix), spec, matrix.ids)
    return evaluate_split(fit, matrix, train, test, name)


def write_metrics_csv(reports: Sequence[EvalReport], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["experiment", "metric", "value"])
        for r in reports:
            for metric, value in r.metric_rows():
                w.writerow([r.name, metric, value])


def markdown_table(reports: Sequence[EvalReport], first_header: str = "Models") -> str:
    lines = [
        f"| {first_header} | Correctly Classified Instances | ROC Area |",
        "|---|---|---|",
    ]
    for r in reports:
        lines.append(f"| {r.name} | {r.accuracy:.4f} % | {r.weighted_auc:.3f} |")
    return "\n".join(lines) + "\n"


def confusion_markdown(cm: ConfusionMatrix, class_names: Sequence[str]) -> str:
    lines = [
        "| Actual class ↓ Predicted class → | " + " | ".join(class_names) + " |",
        "|---" * (len(class_names) + 1) + "|",
    ]
    for name, row in zip(class_names, cm.to_list()):
        lines.append(f"| {name} | " + " | ".join(str(v) for v in row) + " |")
    return "\n".join(lines) + "\n"
