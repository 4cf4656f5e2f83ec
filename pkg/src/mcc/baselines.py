"""BR, CC and ECC over an L2-regularized logistic regression.

All baselines read every modality (the concatenated feature matrix), so their
cost-average is always the sum of the base modality costs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .chain import unchain, fixed_plan
from .dataset import MultiModalDataset
from .errors import TrainingAborted


@dataclass
class LinearBinaryModel:
    w: np.ndarray
    b: float
    l2: float

    def decision(self, X):
        return np.asarray(X) @ self.w + self.b

    def predict_proba(self, X):
        return expit(self.decision(X))

    def predict(self, X):
        return np.where(self.decision(X) >= 0, 1, -1)


def fit_logistic(X, y, l2: float = 1e-3, epochs: int = 500) -> LinearBinaryModel:
    """Full-batch gradient descent on mean log loss + ``l2/2 * |w|^2``.

    The step size is the inverse Lipschitz constant of the gradient, so the
    descent is monotone for any scaling of ``X``.
    """
    X = np.asarray(X, dtype=np.float64)
    t = (np.asarray(y) + 1) / 2.0
    n, d = X.shape
    Xb = np.hstack([X, np.ones((n, 1))])
    lipschitz = 0.25 * np.linalg.norm(Xb, 2) ** 2 / n + l2
    lr = 1.0 / lipschitz
    theta = np.zeros(d + 1)
    reg = np.r_[np.full(d, l2), 0.0]
    for _ in range(epochs):
        grad = Xb.T @ (expit(Xb @ theta) - t) / n + reg * theta
        theta -= lr * grad
    if not np.all(np.isfinite(theta)):
        raise TrainingAborted("logistic regression diverged")
    return LinearBinaryModel(theta[:d], float(theta[d]), l2)


@dataclass
class BinaryRelevance:
    models: list

    def predict(self, X):
        return np.column_stack([m.predict(X) for m in self.models])


@dataclass
class ClassifierChain:
    tau: tuple
    models: list  # models[j] predicts label tau[j] from [X, labels tau[:j]]

    def predict(self, X):
        X = np.asarray(X, dtype=np.float64)
        chain = np.zeros((X.shape[0], 0))
        for model in self.models:
            z = model.predict(np.hstack([X, chain]))
            chain = np.hstack([chain, z[:, None]])
        return unchain(fixed_plan(self.tau), chain.astype(np.int64))


@dataclass
class EnsembleOfChains:
    chains: list

    def member_predictions(self, X):
        return np.stack([c.predict(X) for c in self.chains])

    def predict(self, X):
        votes = self.member_predictions(X).sum(axis=0)
        return np.where(votes >= 0, 1, -1)


def train_br(data: MultiModalDataset, l2: float = 1e-3, epochs: int = 500) -> BinaryRelevance:
    return BinaryRelevance([fit_logistic(data.X, data.Y[:, l], l2, epochs)
                            for l in range(data.n_labels)])


def train_cc(data: MultiModalDataset, tau=None, l2: float = 1e-3,
             epochs: int = 500) -> ClassifierChain:
    """Chain in order ``tau`` (identity by default), trained on true preceding labels."""
    tau = tuple(range(data.n_labels)) if tau is None else tuple(int(t) for t in tau)
    fixed_plan(tau)
    models = []
    for j, label in enumerate(tau):
        features = np.hstack([data.X, data.Y[:, list(tau[:j])].astype(np.float64)])
        models.append(fit_logistic(features, data.Y[:, label], l2, epochs))
    return ClassifierChain(tau, models)


def train_ecc(data: MultiModalDataset, n_chains: int = 10, seed: int = 0,
              l2: float = 1e-3, epochs: int = 500) -> EnsembleOfChains:
    """``n_chains`` CCs over random label orders; per-label majority vote, ties to +1."""
    if n_chains < 1:
        raise ValueError("n_chains must be >= 1")
    rng = np.random.default_rng(seed)
    chains = [train_cc(data, rng.permutation(data.n_labels), l2, epochs)
              for _ in range(n_chains)]
    return EnsembleOfChains(chains)


def baseline_cost(data: MultiModalDataset) -> float:
    """Every baseline extracts every modality."""
    return float(sum(data.schema.costs))
