"""Random forest of Gini CART trees with learned missing-value routing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..features import ColumnDescriptor, DesignMatrix
from . import _trees


@dataclass(frozen=True)
class DecisionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    missing_left: np.ndarray
    counts: np.ndarray
    cover: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for k in range(self.n_nodes):
            if self.feature[k] >= 0:
                depth[self.left[k]] = depth[self.right[k]] = depth[k] + 1
        return int(depth.max())

    @property
    def distribution(self) -> np.ndarray:
        return self.counts / self.counts.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class ForestModel:
    trees: tuple[DecisionTree, ...]
    mtry: int
    seed: int
    columns: tuple[ColumnDescriptor, ...]
    n_classes: int
    bootstrap: bool = True
    min_leaf: int = 1
    max_depth: int | None = None
    _flat: tuple = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        offsets = np.cumsum([0] + [t.n_nodes for t in self.trees])[:-1]
        shift = lambda a, o: np.where(a >= 0, a + o, -1)  # noqa: E731
        flat = (
            np.asarray(offsets, dtype=np.int64),
            np.array([t.depth() for t in self.trees], dtype=np.int64),
            np.concatenate([t.feature for t in self.trees]),
            np.concatenate([t.threshold for t in self.trees]),
            np.concatenate([shift(t.left, o) for t, o in zip(self.trees, offsets)]),
            np.concatenate([shift(t.right, o) for t, o in zip(self.trees, offsets)]),
            np.concatenate([t.missing_left for t in self.trees]),
            np.concatenate([t.cover for t in self.trees]),
            np.concatenate([t.distribution for t in self.trees]),
        )
        object.__setattr__(self, "_flat", flat)

    def predict_scores(self, X: np.ndarray) -> np.ndarray:
        roots, _, feat, thr, left, right, miss, _, dist = self._flat
        return _trees.forest_scores(np.ascontiguousarray(X, dtype=float), roots, feat, thr, left, right, miss, dist)

    def tree_scores(self, X: np.ndarray) -> np.ndarray:
        """Per-tree leaf distributions, shape (n, trees, classes)."""
        roots, _, feat, thr, left, right, miss, _, dist = self._flat
        leaves = _trees.forest_leaves(np.ascontiguousarray(X, dtype=float), roots, feat, thr, left, right, miss)
        return dist[leaves]

    def shap_values(self, X: np.ndarray) -> np.ndarray:
        """Exact path-dependent Shapley values, shape (n, columns, classes)."""
        roots, depths, feat, thr, left, right, miss, cover, dist = self._flat
        return _trees.tree_shap_batch(
            np.ascontiguousarray(X, dtype=float), roots, depths, feat, thr, left, right, miss, cover, dist
        )

    def expected_value(self) -> np.ndarray:
        """Cover-weighted mean leaf distribution per class, averaged over trees."""
        out = np.zeros(self.n_classes)
        for t in self.trees:
            leaf = t.is_leaf
            out += (t.cover[leaf, None] * t.distribution[leaf]).sum(axis=0) / t.cover[0]
        return out / len(self.trees)


def default_mtry(n_columns: int) -> int:
    return max(1, int(math.floor(math.sqrt(n_columns))))


def fit_forest(
    matrix: DesignMatrix,
    trees: int = 100,
    mtry: int | None = None,
    seed: int = 0,
    bootstrap: bool = True,
    min_leaf: int = 1,
    max_depth: int | None = None,
) -> ForestModel:
    """Grow ``trees`` Gini trees, each on a bootstrap sample with ``mtry``
    candidate columns per split.

    Tree ``t`` draws all its randomness from ``default_rng([seed, t])``, so
    the forest does not depend on the order trees are grown in.
    """
    X = np.ascontiguousarray(matrix.values, dtype=float)
    n, p = X.shape
    if n == 0:
        raise ValueError("cannot fit a forest on an empty matrix")
    if trees < 1:
        raise ValueError("trees must be >= 1")
    mtry = default_mtry(p) if mtry is None else mtry
    if not 1 <= mtry <= max(p, 1):
        raise ValueError(f"mtry must lie in [1, {p}], got {mtry}")
    y = np.asarray(matrix.targets, dtype=np.int64) - 1
    grown = []
    for t in range(trees):
        rng = np.random.default_rng([seed, t])
        sample = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        tree_seed = int(rng.integers(1, 2**63 - 1))
        arrays = _trees.grow_tree(
            X, y, sample.astype(np.int64), matrix.n_classes, mtry, min_leaf,
            -1 if max_depth is None else max_depth, tree_seed,
        )
        grown.append(DecisionTree(*arrays))
    return ForestModel(tuple(grown), mtry, seed, matrix.columns, matrix.n_classes, bootstrap, min_leaf, max_depth)
