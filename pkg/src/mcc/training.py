"""Objective, AdaDelta and the per-stage training loop.

Per instance and extraction step ``t`` the objective is ::

    log_loss(p_t, y) + hinge(s_t, teacher_t) + lam * (|Wm|^2 + |wl|^2 + |c * s_t|)

summed over steps and instances, where ``s_t`` are the modality-head scores
from ``h_t`` and ``teacher_t`` is the KNN-chosen next modality. The first
choice is made from the zero initial state (``s_0 = bm``), so ``s_0`` gets a
hinge term as well. Gradients are exact (back-propagation through the
unrolled steps) and every batch is one AdaDelta update.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from .cell import CellParams, backward_step, confidence, head_backward, init_params
from .chain import ChainPlan, StageDataset, build_train_stage, order_labels
from .dataset import ModalitySchema, MultiModalDataset
from .errors import TrainingAborted
from .inference import Unrolled, unroll

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    hidden: int = 64
    batch_size: int = 32
    iterations: int = 200
    cost_threshold: float | None = None   # None: sum of stage costs
    confidence_threshold: float = 0.9
    lam: float = 0.1
    rho: float = 0.95
    eps: float = 1e-8
    neighbors: int = 5
    margin: float = 1.0
    clip_norm: float | None = 5.0
    init_scale: float = 0.08
    history_cost: float = 0.1
    reset_optimizer_each_epoch: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if not 0 < self.rho < 1:
            raise ValueError("rho must be in (0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be > 0")
        if self.batch_size < 1 or self.iterations < 0 or self.hidden < 1:
            raise ValueError("batch_size, hidden must be >= 1 and iterations >= 0")
        if self.cost_threshold is not None and self.cost_threshold <= 0:
            raise ValueError("cost_threshold must be > 0")
        if self.neighbors < 1:
            raise ValueError("neighbors must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Loss terms


def label_loss(p, y):
    """Log loss of probability ``p`` for labels ``y`` in {-1,+1}; returns ``(loss, d/dlogit)``.

    ``p`` is clamped to ``[1e-12, 1 - 1e-12]``.
    """
    p = np.asarray(p, dtype=np.float64)
    target = (np.asarray(y) + 1) / 2.0
    q = np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
    loss = -(target * np.log(q) + (1.0 - target) * np.log(1.0 - q))
    return loss, p - target


def modality_loss(scores, target, margin: float = 1.0, candidates=None):
    """Multi-class hinge ``sum_{m != target} max(0, margin - s_target + s_m)``.

    ``candidates`` (bool, same shape as ``scores``) limits the sum to the
    given modalities. Rows whose ``target`` is negative contribute nothing.
    Returns ``(loss, d/dscores)``.
    """
    s = np.asarray(scores, dtype=np.float64)
    single = s.ndim == 1
    s = np.atleast_2d(s)
    target = np.atleast_1d(np.asarray(target, dtype=np.int64))
    cand = np.ones_like(s, dtype=bool) if candidates is None else np.atleast_2d(candidates)
    valid = target >= 0
    rows = np.arange(s.shape[0])
    t = np.maximum(target, 0)
    viol = margin - s[rows, t][:, None] + s
    others = cand.copy()
    others[rows, t] = False
    active = (viol > 0) & others & valid[:, None]
    loss = np.where(active, viol, 0.0).sum(axis=1)
    grad = active.astype(np.float64)
    grad[rows, t] -= active.sum(axis=1)
    if single:
        return float(loss[0]), grad[0]
    return loss, grad


def regularizer(params: CellParams, scores, costs):
    """``|Wm|^2 + |wl|^2 + |costs * scores|`` (last term is a Euclidean norm).

    Returns ``(value, dW_m, dw_l, dscores)``; the Frobenius terms' gradients
    are for one evaluation, ``dscores`` is row-wise for batches. The norm's
    gradient at a zero vector is taken as zero.
    """
    s = np.asarray(scores, dtype=np.float64)
    c = np.asarray(costs, dtype=np.float64)
    weighted = c * s
    norm = np.sqrt(np.sum(weighted ** 2, axis=-1))
    safe = np.where(norm > 0, norm, 1.0)
    dscores = np.where(np.expand_dims(norm > 0, -1),
                       c * weighted / np.expand_dims(safe, -1), 0.0)
    ridge = np.sum(params.W_m ** 2) + np.sum(params.w_l ** 2)
    return ridge + norm, 2.0 * params.W_m, 2.0 * params.w_l, dscores


def total_step_loss(label_terms, modality_terms, reg_terms, lam: float) -> float:
    """Batch sum of label loss + modality loss + ``lam`` * regularizer."""
    parts = [np.sum(label_terms), np.sum(modality_terms), np.sum(reg_terms)]
    if not np.all(np.isfinite(parts)):
        raise TrainingAborted(f"non-finite loss term: label={parts[0]}, "
                              f"modality={parts[1]}, reg={parts[2]}")
    return float(parts[0] + parts[1] + lam * parts[2])


# ---------------------------------------------------------------------------
# AdaDelta


def _as_arrays(x) -> dict[str, np.ndarray]:
    if isinstance(x, CellParams):
        return {"": x.flat()}
    if isinstance(x, dict):
        return x
    return {"": np.asarray(x, dtype=np.float64)}


@dataclass
class AdaDeltaState:
    E_g2: dict
    E_dx2: dict

    @classmethod
    def like(cls, template) -> "AdaDeltaState":
        arrays = _as_arrays(template)
        return cls({k: np.zeros_like(v, dtype=np.float64) for k, v in arrays.items()},
                   {k: np.zeros_like(v, dtype=np.float64) for k, v in arrays.items()})


def adadelta_update(state: AdaDeltaState, grads, rho: float = 0.95, eps: float = 1e-8):
    """Advance the accumulators with ``grads`` and return the step ``dW``.

    Apply with ``W += dW``. Returns the same container kind as ``grads``
    (CellParams, dict, or array).
    """
    g_arrays = _as_arrays(grads)
    deltas = {}
    for k, g in g_arrays.items():
        state.E_g2[k] = rho * state.E_g2[k] + (1.0 - rho) * g * g
        dx = -np.sqrt(state.E_dx2[k] + eps) / np.sqrt(state.E_g2[k] + eps) * g
        state.E_dx2[k] = rho * state.E_dx2[k] + (1.0 - rho) * dx * dx
        deltas[k] = dx
    if isinstance(grads, CellParams):
        return CellParams.from_flat(deltas[""], grads.shapes())
    if isinstance(grads, dict):
        return deltas
    return deltas[""]


def clip_global_norm(grads: CellParams, max_norm: float | None) -> float:
    flat = grads.flat()
    norm = float(np.sqrt(flat @ flat))
    if max_norm is not None and norm > max_norm:
        if getattr(grads, "_buffer", None) is flat:
            flat *= max_norm / norm
        else:
            for v in grads.arrays().values():
                v *= max_norm / norm
    return norm


# ---------------------------------------------------------------------------
# KNN teacher for the modality head


def knn_agreement(d: np.ndarray, y: np.ndarray, k: int) -> np.ndarray:
    """Fraction of each row's ``k`` nearest columns of ``d`` that share its label.

    Neighbours tied at the k-th distance share the remaining slots evenly,
    so the result does not depend on instance order.
    """
    kth = np.partition(d, k - 1, axis=1)[:, k - 1:k]
    same = y[None, :] == y[:, None]
    closer = d < kth
    tied = d == kth
    n_closer = closer.sum(axis=1)
    agree = (closer & same).sum(axis=1) + (k - n_closer) * (tied & same).sum(axis=1) / tied.sum(axis=1)
    return agree / k


class KNNTeacher:
    """Picks the unextracted modality whose addition best agrees with the K nearest neighbours.

    For an instance and an extracted set ``E``, each candidate ``m`` is scored
    by the fraction of its K nearest training neighbours (Euclidean distance
    on the columns of ``E | {m}``, the instance itself excluded) that share
    its label. Ties go to the cheaper, then lower-indexed, modality. Scores
    are cached per modality subset.
    """

    def __init__(self, X: np.ndarray, y: np.ndarray, schema: ModalitySchema, k: int = 5):
        self.y = np.asarray(y)
        self.schema = schema
        self.n = len(self.y)
        if self.n < 2:
            raise ValueError("KNN teacher needs at least two training instances")
        self.k = min(k, self.n - 1)
        self.costs = np.asarray(schema.costs)
        self._blocks = []
        for m in range(schema.n_modalities):
            B = X[:, schema.block(m)]
            sq = np.sum(B * B, axis=1)
            d2 = sq[:, None] + sq[None, :] - 2.0 * B @ B.T
            self._blocks.append(np.maximum(d2, 0.0).astype(np.float32))
        self._agree: dict[int, np.ndarray] = {}
        # candidates are visited cheapest first, so strict improvement keeps tie-break order
        self._visit = np.lexsort((np.arange(schema.n_modalities), self.costs))

    def agreement(self, subset: int) -> np.ndarray:
        """Per-instance neighbour label agreement for a modality bitmask."""
        if subset not in self._agree:
            d = np.zeros((self.n, self.n), dtype=np.float32)
            for m in range(self.schema.n_modalities):
                if subset >> m & 1:
                    d += self._blocks[m]
            np.fill_diagonal(d, np.inf)
            self._agree[subset] = knn_agreement(d, self.y, self.k)
        return self._agree[subset]

    def targets(self, rows: np.ndarray, extracted: np.ndarray) -> np.ndarray:
        """Teacher modality per row (``-1`` when nothing is left)."""
        rows = np.asarray(rows)
        extracted = np.atleast_2d(extracted)
        P = self.schema.n_modalities
        bits = extracted.astype(np.int64) @ (1 << np.arange(P))
        out = np.full(len(rows), -1, dtype=np.int64)
        for pattern in np.unique(bits):
            sel = bits == pattern
            best_score = np.full(sel.sum(), -np.inf)
            best = np.full(sel.sum(), -1, dtype=np.int64)
            for m in self._visit:
                if pattern >> m & 1:
                    continue
                score = self.agreement(int(pattern) | (1 << int(m)))[rows[sel]]
                better = score > best_score
                best[better] = m
                best_score[better] = score[better]
            out[sel] = best
        return out


def teacher_modality(x, y, stage: StageDataset, extracted, k: int = 5,
                     exclude: int | None = None) -> int:
    """Teacher choice for one instance ``(x, y)`` against ``stage``'s training rows.

    Uncached reference for :class:`KNNTeacher`; ``exclude`` drops one training
    row (the instance itself) from the neighbour search.
    """
    from .cell import ModalitiesExhausted

    schema = stage.schema
    P = schema.n_modalities
    done = set(int(m) for m in extracted)
    candidates = [m for m in range(P) if m not in done]
    if not candidates:
        raise ModalitiesExhausted("no modality left for the teacher")
    x = np.asarray(x, dtype=np.float64)
    owner = schema.column_owner()
    n_pool = len(stage.y) - (exclude is not None)
    k = min(k, n_pool)
    best, best_key = -1, None
    for m in candidates:
        cols = np.isin(owner, sorted(done | {m}))
        d = np.sum((stage.X[:, cols] - x[cols]) ** 2, axis=1)
        keep = np.ones(len(d), dtype=bool)
        if exclude is not None:
            keep[exclude] = False
        d, labels = d[keep], stage.y[keep]
        kth = np.sort(d)[k - 1]
        closer, tied = d < kth, d == kth
        share = (k - closer.sum()) / tied.sum()
        score = (np.sum(labels[closer] == y) + share * np.sum(labels[tied] == y)) / k
        key = (-score, schema.costs[m], m)
        if best_key is None or key < best_key:
            best, best_key = m, key
    return best


# ---------------------------------------------------------------------------
# Objective over an unrolled batch


def unrolled_targets(unrolled: Unrolled, n_modalities: int,
                     teacher: Callable[[np.ndarray], np.ndarray]):
    """Teacher target before each step: returns a list of ``len(hs)`` arrays.

    ``teacher(extracted_mask)`` maps a (B, P) bool mask to target indices.
    """
    B = unrolled.batch
    extracted = np.zeros((B, n_modalities), dtype=bool)
    targets = []
    for t in range(len(unrolled.hs)):
        live = unrolled.lengths >= t
        tgt = teacher(extracted.copy())
        targets.append(np.where(live & ~extracted.all(axis=1), tgt, -1))
        if t < unrolled.sequences.shape[1]:
            rows = np.flatnonzero(unrolled.sequences[:, t] >= 0)
            extracted[rows, unrolled.sequences[rows, t]] = True
    return targets


def objective(params: CellParams, unrolled: Unrolled, y, targets, costs, lam: float,
              margin: float = 1.0, restrict_hinge: bool = True, with_grad: bool = True):
    """Summed batch loss and its exact gradient w.r.t. every parameter.

    ``targets[t]`` is the teacher for ``scores[t]`` (``-1`` for none). With
    ``restrict_hinge`` the hinge only competes against modalities not yet
    extracted. Returns ``(loss, grads, parts)``; ``grads`` is None when
    ``with_grad`` is false.
    """
    y = np.asarray(y)
    costs = np.asarray(costs, dtype=np.float64)
    B = unrolled.batch
    T = len(unrolled.caches)
    P = len(costs)
    grads = params.zeros_like() if with_grad else None
    lengths = unrolled.lengths

    extracted = np.zeros((B, P), dtype=bool)
    cand = []
    for t in range(T + 1):
        cand.append(~extracted.copy() if restrict_hinge else np.ones((B, P), dtype=bool))
        if t < T:
            rows = np.flatnonzero(unrolled.sequences[:, t] >= 0)
            extracted[rows, unrolled.sequences[rows, t]] = True

    label_terms, hinge_terms, reg_terms = [], [], []
    dlogits, dscores = [], []
    for t in range(T + 1):
        live = lengths >= t
        s = unrolled.scores[t]
        hl, hg = modality_loss(s, np.where(live, targets[t], -1), margin, cand[t])
        hinge_terms.append(hl)
        ds = hg
        dl = np.zeros(B)
        if t > 0:
            step = (lengths >= t).astype(np.float64)
            ll, g = label_loss(unrolled.probs[t - 1], y)
            label_terms.append(ll * step)
            dl = g * step
            r, dWm, dwl, drs = regularizer(params, s, costs)
            n_live = step.sum()
            reg_terms.append(r * step)
            if with_grad:
                grads.W_m += lam * n_live * dWm
                grads.w_l += lam * n_live * dwl
            ds = ds + lam * drs * step[:, None]
        dlogits.append(dl)
        dscores.append(ds)

    loss = total_step_loss(label_terms, hinge_terms, reg_terms, lam)
    parts = {
        "label": float(np.sum(label_terms)),
        "modality": float(np.sum(hinge_terms)),
        "regularizer": float(np.sum(reg_terms)),
    }
    if not with_grad:
        return loss, None, parts

    H = params.hidden_size
    dh_next = np.zeros((B, H))
    dC_next = np.zeros((B, H))
    for t in range(T, 0, -1):
        dh = dh_next + head_backward(params, unrolled.hs[t], dlogits[t], dscores[t], grads)
        _, dC_next, dh_next = backward_step(params, unrolled.caches[t - 1], dC_next, dh, grads)
    head_backward(params, unrolled.hs[0], dlogits[0], dscores[0], grads)
    return loss, grads, parts


# ---------------------------------------------------------------------------
# Training loops


@dataclass
class StageModel:
    params: CellParams
    stage: int
    schema: ModalitySchema
    log: list = field(default_factory=list, repr=False)


def _stage_rng(seed: int, stage: int) -> np.random.Generator:
    return np.random.default_rng([seed, stage])


def stage_budget(cfg: TrainConfig, schema: ModalitySchema) -> float:
    return float(sum(schema.costs)) if cfg.cost_threshold is None else cfg.cost_threshold


def train_stage(stage: StageDataset, cfg: TrainConfig) -> StageModel:
    """Fit one chain stage; every mini-batch is an AdaDelta step on the summed loss."""
    if stage.n_instances == 0:
        raise ValueError("empty stage dataset")
    rng = _stage_rng(cfg.seed, stage.stage)
    schema = stage.schema
    P = schema.n_modalities
    params = init_params(cfg.hidden, schema.total_dim, P, rng, cfg.init_scale)
    teacher = KNNTeacher(stage.X, stage.y, schema, cfg.neighbors)
    opt = AdaDeltaState.like(params)
    budget = stage_budget(cfg, schema)
    model = StageModel(params, stage.stage, schema)
    N = stage.n_instances

    for epoch in range(cfg.iterations):
        if cfg.reset_optimizer_each_epoch:
            opt = AdaDeltaState.like(params)
        order = rng.permutation(N)
        total, steps, conf = 0.0, 0, 0.0
        for start in range(0, N, cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            unrolled = unroll(params, stage.X[rows], schema, mode="train",
                              cost_threshold=budget,
                              confidence_threshold=cfg.confidence_threshold)
            targets = unrolled_targets(unrolled, P, lambda ext: teacher.targets(rows, ext))
            try:
                loss, grads, _ = objective(params, unrolled, stage.y[rows], targets,
                                           schema.costs, cfg.lam, cfg.margin)
            except TrainingAborted as exc:
                raise TrainingAborted(f"stage {stage.stage}: {exc}", cfg.seed, epoch) from None
            clip_global_norm(grads, cfg.clip_norm)
            step = adadelta_update(opt, grads, cfg.rho, cfg.eps)
            params.flat()[...] += step.flat()
            total += loss
            steps += int(unrolled.lengths.sum())
            conf += float(confidence(unrolled.final_probs()).sum())
        if not params.is_finite():
            raise TrainingAborted(f"stage {stage.stage}: parameters diverged", cfg.seed, epoch)
        model.log.append({"epoch": epoch, "mean_loss": total / N,
                          "mean_modalities": steps / N, "mean_confidence": conf / N})
    if model.log:
        log.debug("stage %d final %s", stage.stage, model.log[-1])
    return model


@dataclass
class MCCChain:
    plan: ChainPlan
    stages: list
    config: TrainConfig

    def predict(self, data: MultiModalDataset, cfg: TrainConfig | None = None):
        from .inference import predict_chain
        return predict_chain(self.stages, self.plan, data, cfg or self.config)


def train_mcc(data: MultiModalDataset, cfg: TrainConfig = TrainConfig()) -> MCCChain:
    """Order labels by Gini index and train one stage per chain position."""
    plan = order_labels(data.Y, cfg.history_cost)
    stages = []
    for j in range(plan.n_labels):
        stage = build_train_stage(plan, data, j)
        stages.append(train_stage(stage, cfg))
    return MCCChain(plan, stages, cfg)


def with_overrides(cfg: TrainConfig, **kw) -> TrainConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
