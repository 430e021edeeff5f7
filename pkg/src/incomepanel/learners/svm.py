"""Soft-margin SVM trained by SMO, combined one-vs-one for several classes.

The dual is solved in the minimisation form

    min  1/2 a'Qa - sum(a)   s.t.  y'a = 0,  0 <= a <= C,   Q_ij = y_i y_j K(x_i, x_j)

picking the maximal-violating index ``i`` and a second-order choice of ``j``
each step. The solver stops once the KKT violation gap drops below ``tol``.
"""

from __future__ import annotations

import itertools
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from ..errors import ConvergenceError
from ..features import ColumnDescriptor, DesignMatrix, N_CLASSES
from .base import MissingPlan, handle_missing

TAU = 1e-12
_FULL_KERNEL_BYTES = 200 * 2**20


@dataclass(frozen=True)
class Kernel:
    kind: str = "linear"
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "rbf"):
            raise ValueError(f"unknown kernel {self.kind!r}")

    def __call__(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        if self.kind == "linear":
            return A @ B.T
        d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2 * A @ B.T
        return np.exp(-self.gamma * np.maximum(d2, 0.0))


class _KernelColumns:
    def __init__(self, X: np.ndarray, kernel: Kernel, cache_size: int = 256):
        self.X = X
        self.kernel = kernel
        n = len(X)
        self.full = kernel(X, X) if n * n * 8 <= _FULL_KERNEL_BYTES else None
        self.diag = np.diag(self.full).copy() if self.full is not None else (
            (X * X).sum(1) if kernel.kind == "linear" else np.ones(n)
        )
        self.cache: OrderedDict[int, np.ndarray] = OrderedDict()
        self.cache_size = cache_size

    def __getitem__(self, i: int) -> np.ndarray:
        if self.full is not None:
            return self.full[i]
        col = self.cache.get(i)
        if col is None:
            col = self.kernel(self.X, self.X[i : i + 1])[:, 0]
            self.cache[i] = col
            if len(self.cache) > self.cache_size:
                self.cache.popitem(last=False)
        else:
            self.cache.move_to_end(i)
        return col


@dataclass(frozen=True)
class BinarySvm:
    support: np.ndarray  # support vectors, one per row
    coef: np.ndarray  # alpha_k * y_k for each support vector
    alpha: np.ndarray  # full dual vector over the training rows
    bias: float
    kernel: Kernel
    C: float
    pair: tuple[int, int] = (1, 2)
    iterations: int = 0

    def decision(self, X: np.ndarray) -> np.ndarray:
        if len(self.support) == 0:
            return np.full(len(X), self.bias)
        return self.kernel(X, self.support) @ self.coef + self.bias


def dual_objective(alpha: np.ndarray, y: np.ndarray, K: np.ndarray) -> float:
    """Dual objective in maximisation form: sum(a) - 1/2 a'Qa."""
    v = alpha * y
    return float(alpha.sum() - 0.5 * v @ K @ v)


def smo_solve_binary(
    X: np.ndarray,
    y: np.ndarray,
    C: float = 1.0,
    kernel: Kernel = Kernel(),
    tol: float = 1e-3,
    max_iter: int | None = None,
    pair: tuple[int, int] = (1, 2),
) -> BinarySvm:
    """Train one binary SVM; ``y`` holds +1/-1 labels."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    if C <= 0:
        raise ValueError("C must be positive")
    if not ((y == 1).any() and (y == -1).any()):
        raise ValueError("both classes (+1 and -1) must be present")
    if not np.isin(y, (-1.0, 1.0)).all():
        raise ValueError("labels must be +1 or -1")
    max_iter = max(100_000, 100 * n) if max_iter is None else max_iter
    K = _KernelColumns(X, kernel)
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of the minimisation objective
    pos = y > 0
    it = 0
    while True:
        minus_yg = -y * grad
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        if not up.any() or not low.any():
            break
        i = int(np.flatnonzero(up)[np.argmax(minus_yg[up])])
        m_val = minus_yg[i]
        M_val = minus_yg[low].min()
        if m_val - M_val < tol:
            break
        if it >= max_iter:
            raise ConvergenceError(f"SMO did not converge within {max_iter} iterations (pair {pair})")
        Ki = K[i]
        cand = low & (minus_yg < m_val)
        b = m_val - minus_yg[cand]
        a = K.diag[i] + K.diag[cand] - 2.0 * Ki[cand]
        a = np.where(a > 0, a, TAU)
        j = int(np.flatnonzero(cand)[np.argmin(-(b * b) / a)])
        quad = K.diag[i] + K.diag[j] - 2.0 * Ki[j]
        quad = quad if quad > 0 else TAU
        step = (m_val - minus_yg[j]) / quad
        room_i = C - alpha[i] if y[i] > 0 else alpha[i]
        room_j = alpha[j] if y[j] > 0 else C - alpha[j]
        step = min(step, room_i, room_j)
        alpha[i] += y[i] * step
        alpha[j] -= y[j] * step
        # snap to the box to keep bound membership exact
        for k in (i, j):
            if alpha[k] < 1e-15 * C:
                alpha[k] = 0.0
            elif alpha[k] > C * (1 - 1e-15):
                alpha[k] = C
        grad += y * step * (Ki - K[j])
        it += 1
    bias = _bias(alpha, y, grad, C)
    sv = alpha > 0
    return BinarySvm(X[sv].copy(), (alpha * y)[sv], alpha, bias, kernel, C, pair, it)


def _bias(alpha, y, grad, C) -> float:
    yg = y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        return float(-yg[free].mean())
    pos = y > 0
    at_upper = alpha >= C
    # bounds on rho = y_t * G_t from the KKT conditions of bounded variables
    ub_mask = (at_upper & ~pos) | (~at_upper & pos)
    lb_mask = (at_upper & pos) | (~at_upper & ~pos)
    ub = yg[ub_mask].min() if ub_mask.any() else np.inf
    lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
    if np.isinf(ub) or np.isinf(lb):
        rho = ub if np.isfinite(ub) else lb
    else:
        rho = 0.5 * (ub + lb)
    return float(-rho)


@dataclass(frozen=True)
class MultiSvm:
    machines: tuple[BinarySvm, ...]
    plan: MissingPlan
    columns: tuple[ColumnDescriptor, ...]
    n_classes: int = N_CLASSES

    def votes(self, X: np.ndarray) -> np.ndarray:
        Z = self.plan.transform(X)
        votes = np.zeros((len(Z), self.n_classes))
        for m in self.machines:
            f = m.decision(Z)
            a, b = m.pair
            votes[:, a - 1] += f >= 0
            votes[:, b - 1] += f < 0
        return votes

    def predict_scores(self, X: np.ndarray) -> np.ndarray:
        return self.votes(X) / len(self.machines)


def pair_problem(Z: np.ndarray, targets: np.ndarray, a: int, b: int) -> tuple[np.ndarray, np.ndarray]:
    """Rows of classes ``a`` and ``b`` with ``a`` as +1 and ``b`` as -1."""
    rows = (targets == a) | (targets == b)
    return Z[rows], np.where(targets[rows] == a, 1.0, -1.0)


def fit_svm_multiclass(
    matrix: DesignMatrix,
    C: float = 1.0,
    kernel: Kernel = Kernel(),
    tol: float = 1e-3,
    max_iter: int | None = None,
) -> MultiSvm:
    """One SMO machine per class pair, trained on that pair's rows only."""
    present = set(np.unique(matrix.targets).tolist())
    missing = [c for c in range(1, matrix.n_classes + 1) if c not in present]
    if missing:
        raise ValueError(f"class(es) {missing} absent from the training data")
    plan = handle_missing("svm", matrix)
    Z = plan.transform(matrix.values)
    machines = []
    for a, b in itertools.combinations(range(1, matrix.n_classes + 1), 2):
        Xp, yp = pair_problem(Z, matrix.targets, a, b)
        try:
            machines.append(smo_solve_binary(Xp, yp, C, kernel, tol, max_iter, pair=(a, b)))
        except ConvergenceError as exc:
            raise ConvergenceError(f"class pair ({a}, {b}): {exc}") from exc
    return MultiSvm(tuple(machines), plan, matrix.columns, matrix.n_classes)
