"""Shapley attributions: exact TreeSHAP for forests, permutation sampling
for any score function, and the variable-level summaries built on them."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

from .dataset import format_cell
from .errors import LayoutError
from .features import ColumnDescriptor
from .learners.base import check_layout
from .learners.forest import ForestModel

SUMMARY_HEADER = ["instance_id", "variable", "shap_value", "feature_value", "feature_value_rank"]
RANKING_HEADER = ["variable", "mean_abs_shap"]


@dataclass(frozen=True)
class ShapRow:
    base: float
    values: np.ndarray
    variables: tuple[str, ...]
    target_class: int
    instance_id: str = ""
    stderr: np.ndarray | None = None

    @property
    def total(self) -> float:
        return float(self.base + self.values.sum())


@dataclass(frozen=True)
class ShapMatrix:
    variables: tuple[str, ...]
    base: np.ndarray  # (n,)
    values: np.ndarray  # (n, variables)
    classes: np.ndarray  # (n,) class each row explains
    instance_ids: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.base)

    @classmethod
    def from_rows(cls, rows: Sequence[ShapRow]) -> "ShapMatrix":
        if not rows:
            raise ValueError("no rows")
        variables = rows[0].variables
        if any(r.variables != variables for r in rows):
            raise ValueError("rows disagree on variable order")
        return cls(
            variables,
            np.array([r.base for r in rows]),
            np.vstack([r.values for r in rows]),
            np.array([r.target_class for r in rows]),
            tuple(r.instance_id for r in rows),
        )

    def row(self, i: int) -> ShapRow:
        return ShapRow(self.base[i], self.values[i], self.variables, int(self.classes[i]), self.instance_ids[i])


def _column_names(columns: Sequence[ColumnDescriptor]) -> tuple[str, ...]:
    return tuple(c.label for c in columns)


def tree_shap_matrix(
    forest: ForestModel,
    X: np.ndarray,
    classes: Sequence[int] | None = None,
    instance_ids: Sequence[str] | None = None,
) -> ShapMatrix:
    """Exact attributions over the encoded columns for a batch of rows.

    ``classes`` picks the explained class score per row (1-based); by
    default each row's predicted class.
    """
    X = check_layout(forest, X)
    phi = forest.shap_values(X)
    base = forest.expected_value()
    if classes is None:
        classes = np.argmax(forest.predict_scores(X), axis=1) + 1
    classes = np.asarray(classes, dtype=np.int64)
    rows = np.arange(len(X))
    ids = tuple(instance_ids) if instance_ids is not None else tuple(str(i) for i in rows)
    return ShapMatrix(
        _column_names(forest.columns), base[classes - 1], phi[rows, :, classes - 1], classes, ids
    )


def tree_shap(forest: ForestModel, instance: Sequence[float], target_class: int | None = None, instance_id: str = "") -> ShapRow:
    classes = None if target_class is None else [target_class]
    return tree_shap_matrix(forest, np.asarray(instance, dtype=float)[None, :], classes, [instance_id]).row(0)


def sampling_shap(
    score: Callable[[np.ndarray], np.ndarray],
    instance: Sequence[float],
    background: np.ndarray,
    samples: int = 128,
    seed: int = 0,
    groups: Sequence[Sequence[int]] | None = None,
    names: Sequence[str] | None = None,
    target_class: int = 0,
    instance_id: str = "",
) -> ShapRow:
    """Monte Carlo permutation estimate of interventional Shapley values.

    Each sample draws a feature order and one background row, then switches
    groups of columns from the background row to ``instance`` in that order,
    crediting each group with the change in ``score``. ``score`` maps a
    2-D batch to one value per row.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    x = np.asarray(instance, dtype=float)
    background = np.atleast_2d(np.asarray(background, dtype=float))
    if len(background) == 0:
        raise ValueError("empty background")
    groups = [list(g) for g in groups] if groups is not None else [[j] for j in range(len(x))]
    names = tuple(names) if names is not None else tuple(str(j) for j in range(len(groups)))
    k = len(groups)
    rng = np.random.default_rng(seed)
    batch = np.empty((samples, k + 1, len(x)))
    perms = np.empty((samples, k), dtype=np.int64)
    for s in range(samples):
        perm = rng.permutation(k)
        z = background[rng.integers(len(background))].copy()
        batch[s, 0] = z
        for step, g in enumerate(perm, start=1):
            z[groups[g]] = x[groups[g]]
            batch[s, step] = z
        perms[s] = perm
    f = np.asarray(score(batch.reshape(-1, len(x))), dtype=float).reshape(samples, k + 1)
    contrib = np.empty((samples, k))
    deltas = np.diff(f, axis=1)
    for s in range(samples):
        contrib[s, perms[s]] = deltas[s]
    phi = contrib.mean(axis=0)
    se = contrib.std(axis=0, ddof=1) / np.sqrt(samples) if samples > 1 else np.zeros(k)
    base = float(np.mean(score(background)))
    return ShapRow(base, phi, names, target_class, instance_id, se)


def aggregate_onehot(row: ShapRow, descriptors: Sequence[ColumnDescriptor]) -> ShapRow:
    """Sum encoded-column attributions into one value per source variable."""
    if len(descriptors) != len(row.values):
        raise LayoutError(f"{len(row.values)} attributions but {len(descriptors)} column descriptors")
    sources: list[str] = []
    for d in descriptors:
        if d.source not in sources:
            sources.append(d.source)
    out = np.zeros(len(sources))
    pos = {s: i for i, s in enumerate(sources)}
    for d, v in zip(descriptors, row.values):
        out[pos[d.source]] += v
    return ShapRow(row.base, out, tuple(sources), row.target_class, row.instance_id)


def aggregate_matrix(m: ShapMatrix, descriptors: Sequence[ColumnDescriptor]) -> ShapMatrix:
    if len(descriptors) != len(m.variables):
        raise LayoutError(f"{len(m.variables)} columns but {len(descriptors)} column descriptors")
    sources: list[str] = []
    for d in descriptors:
        if d.source not in sources:
            sources.append(d.source)
    assign = np.zeros((len(descriptors), len(sources)))
    for j, d in enumerate(descriptors):
        assign[j, sources.index(d.source)] = 1.0
    return ShapMatrix(tuple(sources), m.base, m.values @ assign, m.classes, m.instance_ids)


@dataclass(frozen=True)
class FeatureRanking:
    items: tuple[tuple[str, float], ...]

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.items]

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RANKING_HEADER)
            for name, value in self.items:
                w.writerow([name, repr(value)])


def mean_abs_ranking(m: ShapMatrix) -> FeatureRanking:
    """Variables by mean |phi| over rows, largest first, ties by name.

    Rows explaining different classes are pooled, which weights each
    class by its share of the rows.
    """
    if len(m) == 0:
        raise ValueError("empty SHAP matrix")
    means = np.abs(m.values).mean(axis=0)
    items = sorted(zip(m.variables, (float(v) for v in means)), key=lambda t: (-t[1], t[0]))
    return FeatureRanking(tuple(items))


def shap_summary_export(m: ShapMatrix, feature_values: dict[str, np.ndarray], path: str | Path) -> None:
    """One CSV row per (instance, variable) with the raw value and its
    normalised rank in [0, 1] among the exported instances."""
    ranks = {}
    for var in m.variables:
        vals = np.asarray(feature_values[var], dtype=float)
        if len(vals) != len(m):
            raise ValueError(f"feature values for {var!r} have {len(vals)} rows, SHAP matrix has {len(m)}")
        r = np.full(len(vals), np.nan)
        ok = ~np.isnan(vals)
        if ok.sum() == 1:
            r[ok] = 0.5
        elif ok.any():
            rk = rankdata(vals[ok])
            r[ok] = (rk - 1) / (ok.sum() - 1)
        ranks[var] = (vals, r)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for i, ident in enumerate(m.instance_ids):
            for j, var in enumerate(m.variables):
                vals, r = ranks[var]
                w.writerow([ident, var, repr(float(m.values[i, j])), format_cell(vals[i]), format_cell(r[i])])


def read_shap_summary(path: str | Path) -> tuple[tuple[str, ...], tuple[str, ...], np.ndarray]:
    """Instance ids, variables and the attribution matrix of a summary CSV."""
    ids: list[str] = []
    variables: list[str] = []
    cells: dict[tuple[str, str], float] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader) != SUMMARY_HEADER:
            raise ValueError(f"{path}: unexpected header")
        for ident, var, value, _, _ in reader:
            if ident not in ids:
                ids.append(ident)
            if var not in variables:
                variables.append(var)
            cells[(ident, var)] = float(value)
    values = np.array([[cells[(i, v)] for v in variables] for i in ids])
    return tuple(ids), tuple(variables), values
