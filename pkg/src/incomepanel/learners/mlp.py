"""One-hidden-layer perceptron: sigmoid hidden units, softmax output,
cross-entropy loss, mini-batch gradient descent with momentum."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConvergenceError
from ..features import ColumnDescriptor, DesignMatrix, N_CLASSES
from .base import MissingPlan, handle_missing


@dataclass(frozen=True)
class MlpParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in (self.W1, self.b1, self.W2, self.b2)])

    @classmethod
    def zeros(cls, n_in: int, hidden: int, n_out: int) -> "MlpParams":
        return cls(np.zeros((n_in, hidden)), np.zeros(hidden), np.zeros((hidden, n_out)), np.zeros(n_out))

    def unflat(self, v: np.ndarray) -> "MlpParams":
        out, k = [], 0
        for a in (self.W1, self.b1, self.W2, self.b2):
            out.append(v[k : k + a.size].reshape(a.shape))
            k += a.size
        return MlpParams(*out)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(params: MlpParams, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    H = sigmoid(X @ params.W1 + params.b1)
    return H, softmax(H @ params.W2 + params.b2)


def loss_and_grad(params: MlpParams, X: np.ndarray, onehot: np.ndarray) -> tuple[float, MlpParams]:
    """Mean cross-entropy over the rows and its gradient by backpropagation."""
    n = len(X)
    H, P = forward(params, X)
    loss = -np.sum(onehot * np.log(np.clip(P, 1e-300, None))) / n
    dZ = (P - onehot) / n
    dW2 = H.T @ dZ
    db2 = dZ.sum(axis=0)
    dA = (dZ @ params.W2.T) * H * (1.0 - H)
    dW1 = X.T @ dA
    db1 = dA.sum(axis=0)
    return float(loss), MlpParams(dW1, db1, dW2, db2)


@dataclass(frozen=True)
class MlpModel:
    params: MlpParams
    plan: MissingPlan
    columns: tuple[ColumnDescriptor, ...]
    n_classes: int = N_CLASSES
    rate: float = 0.3
    momentum: float = 0.2
    epochs: int = 500
    seed: int = 0
    losses: tuple[float, ...] = ()

    def predict_scores(self, X: np.ndarray) -> np.ndarray:
        return forward(self.params, self.plan.transform(X))[1]


def default_hidden(n_features: int, n_classes: int = N_CLASSES) -> int:
    return max(1, math.ceil((n_features + n_classes) / 2))


def train_mlp(
    X: np.ndarray,
    targets: np.ndarray,
    n_classes: int,
    hidden: int,
    rate: float = 0.3,
    momentum: float = 0.2,
    epochs: int = 500,
    seed: int = 0,
    batch_size: int | None = 32,
    init_scale: float = 0.5,
) -> tuple[MlpParams, list[float]]:
    """Train on an already numeric, NaN-free matrix. Returns parameters and
    the full-data loss after each epoch."""
    if hidden < 1:
        raise ValueError("hidden must be >= 1")
    rng = np.random.default_rng(seed)
    n, p = X.shape
    onehot = np.eye(n_classes)[np.asarray(targets, dtype=np.int64) - 1]
    params = MlpParams(
        rng.uniform(-init_scale, init_scale, (p, hidden)),
        rng.uniform(-init_scale, init_scale, hidden),
        rng.uniform(-init_scale, init_scale, (hidden, n_classes)),
        rng.uniform(-init_scale, init_scale, n_classes),
    )
    w = params.flat()
    v = np.zeros_like(w)
    batch = n if not batch_size else min(batch_size, n)
    losses = []
    for epoch in range(epochs):
        order = rng.permutation(n) if batch < n else np.arange(n)
        for s in range(0, n, batch):
            rows = order[s : s + batch]
            _, g = loss_and_grad(params.unflat(w), X[rows], onehot[rows])
            v = momentum * v - rate * g.flat()
            w = w + v
        loss, _ = loss_and_grad(params.unflat(w), X, onehot)
        if not np.isfinite(loss) or not np.isfinite(w).all():
            raise ConvergenceError(f"non-finite MLP loss at epoch {epoch + 1}")
        losses.append(loss)
    return params.unflat(w), losses


def fit_mlp(
    matrix: DesignMatrix,
    hidden: int | None = None,
    rate: float = 0.3,
    momentum: float = 0.2,
    epochs: int = 500,
    seed: int = 0,
    batch_size: int | None = 32,
) -> MlpModel:
    plan = handle_missing("mlp", matrix)
    Z = plan.transform(matrix.values)
    hidden = default_hidden(Z.shape[1], matrix.n_classes) if hidden is None else hidden
    params, losses = train_mlp(
        Z, matrix.targets, matrix.n_classes, hidden, rate, momentum, epochs, seed, batch_size
    )
    return MlpModel(params, plan, matrix.columns, matrix.n_classes, rate, momentum, epochs, seed, tuple(losses))
