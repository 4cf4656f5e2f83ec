"""Sequential modality extraction, chain propagation and cost accounting.

:func:`unroll` runs a batch of instances through the cell, one modality per
step, and is shared by training and prediction. The two differ only in the
stopping rule:

* ``mode="train"``: extract, then stop once the accumulated cost exceeds the
  budget or the label confidence exceeds the threshold.
* ``mode="test"``: stop when confident; otherwise stop *before* an extraction
  that would push the cost over the budget, so the budget is never exceeded
  (except by the mandatory first extraction).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cell import (CellState, confidence, decide, forward_step, mask_rows,
                   modality_scores, predict_label, select_modality)
from .chain import ChainPlan, build_test_stage, unchain
from .dataset import ModalitySchema, MultiModalDataset


@dataclass
class Unrolled:
    """Everything a batch rollout produced, step-major.

    ``sequences[n, t]`` is the modality extracted at step ``t + 1`` (``-1``
    once the instance has stopped). ``hs[t]`` / ``scores[t]`` are indexed from
    the initial zero state, so ``scores[t]`` chose ``sequences[:, t]``.
    """

    sequences: np.ndarray
    lengths: np.ndarray
    costs: np.ndarray
    caches: list
    hs: list
    scores: list
    probs: list

    @property
    def batch(self) -> int:
        return self.sequences.shape[0]

    def final_probs(self) -> np.ndarray:
        P = np.stack(self.probs, axis=1)
        return P[np.arange(self.batch), self.lengths - 1]

    def step_confidences(self) -> list[np.ndarray]:
        P = np.stack(self.probs, axis=1)
        return [confidence(P[n, : self.lengths[n]]) for n in range(self.batch)]


def unroll(params, X: np.ndarray, schema: ModalitySchema, *, mode: str = "test",
           cost_threshold: float | None = None, confidence_threshold: float = 0.9,
           sequences: np.ndarray | None = None) -> Unrolled:
    """Roll a batch ``X`` (augmented features) through the cell.

    With ``sequences`` given (``-1`` padded), the extraction order is forced
    and no stopping rule applies; this is what gradient checks use.
    """
    if mode not in ("train", "test"):
        raise ValueError(f"mode must be 'train' or 'test', got {mode!r}")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    B = X.shape[0]
    P = schema.n_modalities
    costs = np.asarray(schema.costs)
    owner = schema.column_owner()
    budget = np.inf if cost_threshold is None else float(cost_threshold)
    forced = sequences is not None
    if forced:
        sequences = np.asarray(sequences, dtype=np.int64).reshape(B, -1)

    state = CellState.zeros(params.hidden_size, B)
    active = np.ones(B, dtype=bool)
    extracted = np.zeros((B, P), dtype=bool)
    spent = np.zeros(B)
    seq = np.full((B, P), -1, dtype=np.int64)
    lengths = np.zeros(B, dtype=np.int64)
    caches, hs, scores, probs = [], [state.h], [modality_scores(params, state.h)], []

    for t in range(P):
        if forced:
            choice = sequences[:, t] if t < sequences.shape[1] else np.full(B, -1)
            active = active & (choice >= 0)
        else:
            choice = select_modality(scores[-1], extracted)
            if mode == "test" and t > 0:
                over = spent + costs[np.maximum(choice, 0)] > budget
                active = active & ~over
        if not active.any():
            break
        choice = np.where(active, choice, -1)
        state, cache = forward_step(params, state, mask_rows(X, owner, choice))
        prob = predict_label(params, state.h)
        caches.append(cache)
        hs.append(state.h)
        scores.append(modality_scores(params, state.h))
        probs.append(prob)

        rows = np.flatnonzero(active)
        seq[rows, t] = choice[rows]
        extracted[rows, choice[rows]] = True
        spent[rows] += costs[choice[rows]]
        lengths[rows] += 1
        if not forced:
            done = (confidence(prob) > confidence_threshold) | extracted.all(axis=1)
            if mode == "train":
                done |= spent > budget
            active = active & ~done

    return Unrolled(seq[:, : len(caches)], lengths, spent, caches, hs, scores, probs)


# ---------------------------------------------------------------------------
# Traces


@dataclass
class PredictionTrace:
    sequence: tuple[int, ...]
    cost: float
    confidences: tuple[float, ...]
    label: int
    probability: float
    stage: int = 0
    instance: int = 0


def traces_from(unrolled: Unrolled, stage: int = 0, ids=None) -> list[PredictionTrace]:
    ids = range(unrolled.batch) if ids is None else ids
    final = unrolled.final_probs()
    conf = unrolled.step_confidences()
    out = []
    for n, inst in enumerate(ids):
        L = unrolled.lengths[n]
        out.append(PredictionTrace(
            sequence=tuple(int(m) for m in unrolled.sequences[n, :L]),
            cost=float(unrolled.costs[n]),
            confidences=tuple(float(c) for c in conf[n]),
            label=int(decide(final[n])),
            probability=float(final[n]),
            stage=stage,
            instance=int(inst),
        ))
    return out


def _thresholds(cfg):
    return dict(cost_threshold=getattr(cfg, "cost_threshold", None),
                confidence_threshold=getattr(cfg, "confidence_threshold", 0.9))


def predict_instance(model, x, cfg) -> PredictionTrace:
    """Extract modalities for one augmented feature vector until confident or out of budget."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.schema.total_dim:
        raise ValueError(f"x has {x.shape[-1]} features, model expects {model.schema.total_dim}")
    unrolled = unroll(model.params, x.reshape(1, -1), model.schema, mode="test", **_thresholds(cfg))
    return traces_from(unrolled, stage=model.stage)[0]


def predict_stage(model, X: np.ndarray, cfg, stage: int = 0):
    """Batch prediction for one stage; returns ``(labels, traces)``."""
    unrolled = unroll(model.params, X, model.schema, mode="test", **_thresholds(cfg))
    traces = traces_from(unrolled, stage=stage)
    return np.array([tr.label for tr in traces], dtype=np.int64), traces


@dataclass
class ChainPrediction:
    Z: np.ndarray                       # N x L, original label order
    traces: list = field(repr=False)    # stage-major list of per-instance traces

    def cost_average(self) -> float:
        return cost_average(self.traces)


def predict_chain(models, plan: ChainPlan, data: MultiModalDataset, cfg) -> ChainPrediction:
    """Run every stage in chain order, feeding predictions forward as history."""
    if len(models) != plan.n_labels:
        raise ValueError(f"{len(models)} stage models for a chain of {plan.n_labels} labels")
    N = data.n_instances
    chain_pred = np.zeros((N, 0), dtype=np.int64)
    traces = []
    for j, model in enumerate(models):
        stage = build_test_stage(plan, data, j, chain_pred)
        if stage.schema != model.schema:
            raise ValueError(f"stage {j} schema {stage.schema} does not match its model")
        labels, tr = predict_stage(model, stage.X, cfg, stage=j)
        traces.extend(tr)
        chain_pred = np.hstack([chain_pred, labels[:, None]])
    return ChainPrediction(unchain(plan, chain_pred), traces)


def cost_average(traces, include_history: bool = True, history_modality=None) -> float:
    """Mean accumulated extraction cost over (instance, stage) traces.

    With ``include_history=False`` the cost of the label-history modality is
    removed; ``history_modality(trace)`` must then return that modality's
    index and cost for the trace's stage, or None for the first stage.
    """
    traces = list(traces)
    if not traces:
        raise ValueError("cost_average of no traces")
    if include_history:
        return float(np.mean([tr.cost for tr in traces]))
    if history_modality is None:
        raise ValueError("history_modality is required when excluding history cost")
    total = []
    for tr in traces:
        info = history_modality(tr)
        cost = tr.cost
        if info is not None and info[0] in tr.sequence:
            cost -= info[1]
        total.append(cost)
    return float(np.mean(total))


def write_traces(traces, path) -> None:
    """CSV dump: instance, stage, sequence (``;``-joined), cost, confidence, label."""
    with open(Path(path), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance", "stage", "sequence", "cost", "confidence", "label"])
        for tr in traces:
            w.writerow([tr.instance, tr.stage, ";".join(map(str, tr.sequence)),
                        repr(tr.cost), repr(tr.confidences[-1]), tr.label])
