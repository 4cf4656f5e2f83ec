"""Gini-ordered label chains and per-stage augmented datasets.

Stage ``j`` (zero-based) of a chain predicts label ``tau[j]`` and, for
``j > 0``, sees the labels at chain positions ``0..j-1`` as one extra
"history" modality appended after the base modalities. Training stages use
true labels for the history, test stages use the chain's own predictions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import ModalitySchema, MultiModalDataset

DEFAULT_HISTORY_COST = 0.1


def gini_index(labels) -> float:
    """``1 - sum_k p_k**2`` over the empirical class frequencies."""
    labels = np.asarray(labels).reshape(-1)
    if labels.size == 0:
        raise ValueError("gini_index of an empty label list")
    _, counts = np.unique(labels, return_counts=True)
    p = counts / labels.size
    return float(1.0 - np.sum(p * p))


@dataclass(frozen=True)
class ChainPlan:
    """Label order ``tau`` (zero-based label indices) with the Gini values that produced it."""

    tau: tuple[int, ...]
    gini: tuple[float, ...]
    history_cost: float = DEFAULT_HISTORY_COST

    @property
    def n_labels(self) -> int:
        return len(self.tau)

    def to_dict(self) -> dict:
        return {"tau": list(self.tau), "gini": list(self.gini), "history_cost": self.history_cost}

    @classmethod
    def from_dict(cls, d: dict) -> "ChainPlan":
        return cls(tuple(d["tau"]), tuple(d["gini"]), d.get("history_cost", DEFAULT_HISTORY_COST))


def order_labels(Y, history_cost: float = DEFAULT_HISTORY_COST) -> ChainPlan:
    """Order labels by descending Gini index, ties by ascending label index."""
    Y = np.asarray(Y)
    if Y.ndim != 2 or Y.shape[1] < 1:
        raise ValueError("Y must be an N x L matrix with L >= 1")
    gini = [gini_index(Y[:, l]) for l in range(Y.shape[1])]
    tau = sorted(range(len(gini)), key=lambda l: (-gini[l], l))
    return ChainPlan(tuple(tau), tuple(gini), float(history_cost))


def fixed_plan(tau, history_cost: float = DEFAULT_HISTORY_COST) -> ChainPlan:
    """A plan with a caller-chosen order (used by the CC/ECC baselines)."""
    tau = tuple(int(t) for t in tau)
    if sorted(tau) != list(range(len(tau))):
        raise ValueError(f"tau {tau} is not a permutation")
    return ChainPlan(tau, (float("nan"),) * len(tau), history_cost)


@dataclass(frozen=True)
class StageDataset:
    """Inputs and target of one chain stage."""

    stage: int
    X: np.ndarray          # base features with history columns appended
    y: np.ndarray          # target label tau[stage], in {-1, +1}
    history: np.ndarray    # N x stage
    schema: ModalitySchema

    @property
    def n_instances(self) -> int:
        return self.X.shape[0]

    @property
    def costs(self) -> np.ndarray:
        return np.asarray(self.schema.costs)


def augmented_schema(plan: ChainPlan, base: ModalitySchema, j: int) -> ModalitySchema:
    if j == 0:
        return base
    return base.append(j, plan.history_cost)


def _check_stage(plan: ChainPlan, j: int):
    if not 0 <= j < plan.n_labels:
        raise ValueError(f"stage {j} out of range for a chain of {plan.n_labels}")


def _stage(plan, data, j, history):
    history = np.asarray(history, dtype=np.int64).reshape(data.n_instances, j)
    X = np.hstack([data.X, history.astype(np.float64)]) if j else data.X
    return StageDataset(j, X, data.Y[:, plan.tau[j]], history,
                        augmented_schema(plan, data.schema, j))


def build_train_stage(plan: ChainPlan, data: MultiModalDataset, j: int) -> StageDataset:
    """Stage ``j`` with the true labels of earlier chain positions as history."""
    _check_stage(plan, j)
    return _stage(plan, data, j, data.Y[:, list(plan.tau[:j])])


def build_test_stage(plan: ChainPlan, data: MultiModalDataset, j: int,
                     predicted) -> StageDataset:
    """Stage ``j`` with predicted labels (columns in chain order) as history."""
    _check_stage(plan, j)
    predicted = np.asarray(predicted)
    if predicted.size == 0:
        predicted = predicted.reshape(data.n_instances, 0)
    if predicted.ndim != 2 or predicted.shape != (data.n_instances, j):
        raise ValueError(
            f"stage {j} needs {j} predicted columns for {data.n_instances} rows, "
            f"got shape {predicted.shape}"
        )
    if not np.all(np.isin(predicted, (-1, 1))):
        raise ValueError("predicted history must be in {-1, +1}")
    return _stage(plan, data, j, predicted)


def unchain(plan: ChainPlan, chain_ordered) -> np.ndarray:
    """Reorder columns from chain order back to original label order."""
    chain_ordered = np.asarray(chain_ordered)
    Z = np.empty_like(chain_ordered)
    Z[:, list(plan.tau)] = chain_ordered
    return Z
