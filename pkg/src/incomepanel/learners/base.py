"""Majority baseline, missing-value plans and the shared predict entry point."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from ..errors import LayoutError
from ..features import ColumnDescriptor, DesignMatrix, N_CLASSES


class Model(Protocol):
    columns: tuple[ColumnDescriptor, ...]
    n_classes: int

    def predict_scores(self, X: np.ndarray) -> np.ndarray: ...


def check_layout(model: Model, X) -> np.ndarray:
    if isinstance(X, DesignMatrix):
        if X.columns != model.columns:
            raise LayoutError("design matrix columns differ from the model's training columns")
        X = X.values
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != len(model.columns):
        raise LayoutError(f"expected rows with {len(model.columns)} columns, got shape {X.shape}")
    return X


def predict(model: Model, X) -> tuple[np.ndarray, np.ndarray]:
    """Class labels (1-based) and per-class scores for a batch of rows.

    The label is the first maximal score, so ties go to the smallest class id.
    """
    scores = model.predict_scores(check_layout(model, X))
    return np.argmax(scores, axis=1) + 1, scores


def predict_row(model: Model, row: Sequence[float]) -> tuple[int, np.ndarray]:
    labels, scores = predict(model, np.asarray(row, dtype=float)[None, :])
    return int(labels[0]), scores[0]


@dataclass(frozen=True)
class MajorityModel:
    majority: int
    priors: np.ndarray
    columns: tuple[ColumnDescriptor, ...] = ()
    n_classes: int = N_CLASSES

    def predict_scores(self, X: np.ndarray) -> np.ndarray:
        return np.tile(self.priors, (len(X), 1))


def fit_majority(targets, columns: tuple[ColumnDescriptor, ...] = (), n_classes: int = N_CLASSES) -> MajorityModel:
    if isinstance(targets, DesignMatrix):
        columns, n_classes, targets = targets.columns, targets.n_classes, targets.targets
    targets = np.asarray(targets, dtype=np.int64)
    if targets.size == 0:
        raise ValueError("cannot fit a majority model on no labels")
    counts = np.bincount(targets - 1, minlength=n_classes)[:n_classes]
    return MajorityModel(int(np.argmax(counts)) + 1, counts / counts.sum(), tuple(columns), n_classes)


@dataclass(frozen=True)
class MissingPlan:
    """Training-time statistics applied identically to every later batch.

    ``impute`` holds the training mean for numeric/code columns (NaN for
    columns left alone); ``indicator_blocks`` lists one-hot blocks that get
    an extra absent-level column; ``lo``/``span`` rescale to [0, 1].
    """

    impute: np.ndarray
    indicator_blocks: tuple[tuple[int, ...], ...] = ()
    lo: np.ndarray | None = None
    span: np.ndarray | None = None

    @property
    def is_identity(self) -> bool:
        return np.isnan(self.impute).all() and not self.indicator_blocks and self.lo is None

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.array(X, dtype=float, copy=True)
        cols = np.flatnonzero(~np.isnan(self.impute))
        if len(cols):
            sub = X[:, cols]
            holes = np.isnan(sub)
            sub[holes] = np.broadcast_to(self.impute[cols], sub.shape)[holes]
            X[:, cols] = sub
        if self.indicator_blocks:
            extra = [(X[:, list(b)].sum(axis=1) == 0).astype(float) for b in self.indicator_blocks]
            X = np.hstack([X, np.column_stack(extra)])
        if self.lo is not None:
            X = (X - self.lo) / self.span
        return X


def handle_missing(family: str, matrix: DesignMatrix, scale: bool | None = None) -> MissingPlan:
    """Missing-value plan for a model family.

    Forests route absent values inside the trees, so their plan is the
    identity. SVM and MLP get training-mean imputation for numeric columns,
    an absent-level indicator for every one-hot block that has all-zero
    rows, and (by default) min-max scaling to [0, 1].
    """
    p = len(matrix.columns)
    if family == "forest" or family == "majority":
        return MissingPlan(np.full(p, np.nan))
    if family not in ("svm", "mlp"):
        raise ValueError(f"unknown model family {family!r}")
    X = matrix.values
    impute = np.full(p, np.nan)
    for j, c in enumerate(matrix.columns):
        if c.encoding in ("numeric", "code") and np.isnan(X[:, j]).any():
            col = X[:, j]
            impute[j] = np.nanmean(col) if (~np.isnan(col)).any() else 0.0
    blocks: dict[str, list[int]] = {}
    has_missing_col = set()
    for j, c in enumerate(matrix.columns):
        if c.encoding == "onehot":
            blocks.setdefault(c.source, []).append(j)
        elif c.encoding == "missing":
            has_missing_col.add(c.source)
    indicator = tuple(
        tuple(b) for src, b in blocks.items() if src not in has_missing_col and (X[:, b].sum(axis=1) == 0).any()
    )
    plan = MissingPlan(impute, indicator)
    if scale is None or scale:
        Z = plan.transform(X)
        lo = Z.min(axis=0) if len(Z) else np.zeros(Z.shape[1])
        span = (Z.max(axis=0) - lo) if len(Z) else np.ones(Z.shape[1])
        span[span == 0] = 1.0
        plan = MissingPlan(impute, indicator, lo, span)
    return plan
