"""Peephole-gated recurrent cell with a label head and a next-modality head.

One step, with row-vector inputs (a leading batch axis is optional)::

    f = sigmoid(C_prev Wfc' + h_prev Wfh' + x Wfx' + bf)
    i = sigmoid(C_prev Wic' + h_prev Wih' + x Wix' + bi)
    C = f * C_prev + i * tanh(h_prev Wch' + x Wcx' + bC)
    o = sigmoid(C Woc' + h_prev Woh' + x Wox' + bo)
    h = o * tanh(C)

The peephole matrices ``Wfc``, ``Wic``, ``Woc`` are full ``h x h`` matrices.
Heads read the latest hidden state only: ``p = sigmoid(h . wl + bl)`` is the
probability of the positive label and ``s = h Wm + bm`` scores each modality
as the next one to extract.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import math

import numpy as np
from scipy.special import expit

from .dataset import ModalitySchema

CHECKPOINT_FORMAT = "mcc-cell/1"

GATE_WEIGHTS = ("W_fc", "W_fh", "W_fx", "W_ic", "W_ih", "W_ix",
                "W_ch", "W_cx", "W_oc", "W_oh", "W_ox")
GATE_BIASES = ("b_f", "b_i", "b_C", "b_o")
HEAD_PARAMS = ("w_l", "b_l", "W_m", "b_m")
PARAM_NAMES = GATE_WEIGHTS + GATE_BIASES + HEAD_PARAMS


def sigmoid(a):
    return expit(np.asarray(a, dtype=np.float64))


@dataclass
class CellParams:
    """All trainable arrays. Gradients use the same container."""

    W_fc: np.ndarray
    W_fh: np.ndarray
    W_fx: np.ndarray
    W_ic: np.ndarray
    W_ih: np.ndarray
    W_ix: np.ndarray
    W_ch: np.ndarray
    W_cx: np.ndarray
    W_oc: np.ndarray
    W_oh: np.ndarray
    W_ox: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_C: np.ndarray
    b_o: np.ndarray
    w_l: np.ndarray
    b_l: np.ndarray
    W_m: np.ndarray
    b_m: np.ndarray

    @property
    def hidden_size(self) -> int:
        return self.b_f.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_fx.shape[1]

    @property
    def n_modalities(self) -> int:
        return self.b_m.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    @classmethod
    def from_flat(cls, vector: np.ndarray, shapes: dict) -> "CellParams":
        """Parameters as views into ``vector`` (no copy)."""
        out, pos = {}, 0
        for name in PARAM_NAMES:
            size = math.prod(shapes[name])
            out[name] = vector[pos:pos + size].reshape(shapes[name])
            pos += size
        if pos != vector.size:
            raise ValueError(f"flat vector has {vector.size} entries, shapes need {pos}")
        params = cls(**out)
        params._buffer = vector
        return params

    def shapes(self) -> dict:
        return {k: v.shape for k, v in self.arrays().items()}

    def zeros_like(self) -> "CellParams":
        return CellParams.from_flat(np.zeros(self.size), self.shapes())

    def copy(self) -> "CellParams":
        return CellParams.from_flat(self.flat().copy(), self.shapes())

    @property
    def size(self) -> int:
        return sum(v.size for v in self.arrays().values())

    def flat(self) -> np.ndarray:
        """All parameters as one vector; a live view when the params own a buffer."""
        buf = getattr(self, "_buffer", None)
        if buf is not None:
            return buf
        return np.concatenate([v.ravel() for v in self.arrays().values()])

    def set_flat(self, vector: np.ndarray) -> None:
        pos = 0
        for v in self.arrays().values():
            v[...] = vector[pos:pos + v.size].reshape(v.shape)
            pos += v.size

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.flat())))


def init_params(hidden: int, input_size: int, n_modalities: int, seed=0,
                scale: float = 0.08) -> CellParams:
    """Uniform(-scale, scale) weights and zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    h, D, P = hidden, input_size, n_modalities

    def u(*shape):
        return rng.uniform(-scale, scale, size=shape)

    loose = CellParams(
        W_fc=u(h, h), W_fh=u(h, h), W_fx=u(h, D),
        W_ic=u(h, h), W_ih=u(h, h), W_ix=u(h, D),
        W_ch=u(h, h), W_cx=u(h, D),
        W_oc=u(h, h), W_oh=u(h, h), W_ox=u(h, D),
        b_f=np.zeros(h), b_i=np.zeros(h), b_C=np.zeros(h), b_o=np.zeros(h),
        w_l=u(h), b_l=np.zeros(()), W_m=u(h, P), b_m=np.zeros(P),
    )
    return CellParams.from_flat(loose.flat(), loose.shapes())


@dataclass
class CellState:
    C: np.ndarray
    h: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, hidden: int, batch: int | None = None) -> "CellState":
        shape = (hidden,) if batch is None else (batch, hidden)
        return cls(np.zeros(shape), np.zeros(shape), 0)


@dataclass(frozen=True)
class MaskedInput:
    values: np.ndarray
    modality: int


def mask_input(x, schema: ModalitySchema, m: int) -> MaskedInput:
    """Zero every block of ``x`` except modality ``m``."""
    if not 0 <= m < schema.n_modalities:
        raise ValueError(f"modality {m} out of range for {schema.n_modalities}")
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    block = schema.block(m)
    out[..., block] = x[..., block]
    return MaskedInput(out, m)


def mask_rows(X: np.ndarray, owner: np.ndarray, modalities: np.ndarray) -> np.ndarray:
    """Batch form of :func:`mask_input`: row ``n`` keeps block ``modalities[n]``.

    ``owner`` is ``schema.column_owner()``.
    """
    return np.where(owner[None, :] == np.asarray(modalities)[:, None], X, 0.0)


@dataclass
class StepCache:
    x: np.ndarray
    C_prev: np.ndarray
    h_prev: np.ndarray
    f: np.ndarray
    i: np.ndarray
    g: np.ndarray
    C: np.ndarray
    o: np.ndarray
    tanh_C: np.ndarray


def forward_step(params: CellParams, state: CellState, x_hat):
    """Advance one step; returns ``(new_state, cache)``."""
    x = x_hat.values if isinstance(x_hat, MaskedInput) else np.asarray(x_hat, dtype=np.float64)
    p = params
    C_prev, h_prev = state.C, state.h
    if x.shape[-1] != p.input_size or h_prev.shape[-1] != p.hidden_size:
        raise AssertionError(
            f"shape mismatch: x {x.shape}, h {h_prev.shape} vs params "
            f"(D={p.input_size}, h={p.hidden_size})"
        )
    h = p.hidden_size
    # input and recurrent projections for all four gates in one product each
    ax = x @ np.concatenate([p.W_fx, p.W_ix, p.W_cx, p.W_ox]).T
    ah = h_prev @ np.concatenate([p.W_fh, p.W_ih, p.W_ch, p.W_oh]).T
    ac = C_prev @ np.concatenate([p.W_fc, p.W_ic]).T
    f = sigmoid(ac[..., :h] + ah[..., :h] + ax[..., :h] + p.b_f)
    i = sigmoid(ac[..., h:] + ah[..., h:2 * h] + ax[..., h:2 * h] + p.b_i)
    g = np.tanh(ah[..., 2 * h:3 * h] + ax[..., 2 * h:3 * h] + p.b_C)
    C = f * C_prev + i * g
    o = sigmoid(C @ p.W_oc.T + ah[..., 3 * h:] + ax[..., 3 * h:] + p.b_o)
    tanh_C = np.tanh(C)
    h_new = o * tanh_C
    cache = StepCache(x, C_prev, h_prev, f, i, g, C, o, tanh_C)
    return CellState(C, h_new, state.t + 1), cache


def _outer(a, b):
    # sums over the batch axis when present
    return np.atleast_2d(a).T @ np.atleast_2d(b)


def _bsum(a):
    return a.sum(axis=0) if a.ndim == 2 else a


def backward_step(params: CellParams, cache: StepCache, dC, dh, grads: CellParams | None = None):
    """Back-propagate one step.

    ``dC`` and ``dh`` are the loss gradients w.r.t. this step's ``C_t`` and
    ``h_t`` (head terms and the next step's contributions already summed).
    Parameter gradients are added into ``grads`` (allocated if None).
    Returns ``(grads, dC_prev, dh_prev)``.
    """
    if cache is None:
        raise AssertionError("backward_step needs the forward cache of the same step")
    p = params
    if grads is None:
        grads = p.zeros_like()
    c = cache
    do = dh * c.tanh_C
    da_o = do * c.o * (1.0 - c.o)
    dC_t = dC + dh * c.o * (1.0 - c.tanh_C ** 2) + da_o @ p.W_oc
    da_f = dC_t * c.C_prev * c.f * (1.0 - c.f)
    da_i = dC_t * c.g * c.i * (1.0 - c.i)
    da_g = dC_t * c.i * (1.0 - c.g ** 2)

    da_fi = np.concatenate([da_f, da_i], axis=-1)
    da_all = np.concatenate([da_f, da_i, da_g, da_o], axis=-1)
    dC_prev = dC_t * c.f + da_fi @ np.concatenate([p.W_fc, p.W_ic])
    dh_prev = da_all @ np.concatenate([p.W_fh, p.W_ih, p.W_ch, p.W_oh])

    H = p.hidden_size
    gx = _outer(da_all, c.x)
    gh = _outer(da_all, c.h_prev)
    gc = _outer(da_fi, c.C_prev)
    gb = _bsum(da_all)
    grads.W_fc += gc[:H]
    grads.W_ic += gc[H:]
    for k, (wx, wh, b) in enumerate((("W_fx", "W_fh", "b_f"), ("W_ix", "W_ih", "b_i"),
                                     ("W_cx", "W_ch", "b_C"), ("W_ox", "W_oh", "b_o"))):
        rows = slice(k * H, (k + 1) * H)
        getattr(grads, wx)[...] += gx[rows]
        getattr(grads, wh)[...] += gh[rows]
        getattr(grads, b)[...] += gb[rows]
    grads.W_oc += _outer(da_o, c.C)
    return grads, dC_prev, dh_prev


def label_logit(params: CellParams, h):
    return np.asarray(h) @ params.w_l + params.b_l


def predict_label(params: CellParams, h):
    """Probability of the positive label."""
    return sigmoid(label_logit(params, h))


def decide(prob):
    """+1 when ``prob >= 0.5``."""
    return np.where(np.asarray(prob) >= 0.5, 1, -1)


def confidence(prob):
    prob = np.asarray(prob)
    return np.maximum(prob, 1.0 - prob)


def modality_scores(params: CellParams, h):
    return np.asarray(h) @ params.W_m + params.b_m


class ModalitiesExhausted(Exception):
    """Every modality has been extracted; the rollout must stop."""


def select_modality(scores, extracted_mask):
    """Argmax over unextracted modalities, lowest index on ties.

    Works row-wise for batches; rows with nothing left get index -1.
    """
    scores = np.asarray(scores, dtype=np.float64)
    extracted_mask = np.asarray(extracted_mask, dtype=bool)
    masked = np.where(extracted_mask, -np.inf, scores)
    choice = np.argmax(masked, axis=-1)
    return np.where(extracted_mask.all(axis=-1), -1, choice)


def predict_modality(params: CellParams, h, already_extracted=()):
    """Scores for every modality and the best one not yet extracted."""
    scores = modality_scores(params, h)
    P = params.n_modalities
    mask = np.zeros(P, dtype=bool)
    for m in already_extracted:
        mask[m] = True
    if mask.all():
        raise ModalitiesExhausted(f"all {P} modalities already extracted")
    return scores, int(select_modality(scores, mask))


def head_backward(params: CellParams, h, dlogit, dscores, grads: CellParams):
    """Accumulate head gradients; returns the gradient w.r.t. ``h``."""
    h = np.asarray(h)
    grads.w_l += np.atleast_2d(h).T @ np.atleast_1d(dlogit) if h.ndim == 2 else h * dlogit
    grads.b_l += np.sum(dlogit)
    grads.W_m += _outer(h, dscores)
    grads.b_m += _bsum(np.asarray(dscores))
    dh = np.multiply.outer(dlogit, params.w_l) if h.ndim == 2 else dlogit * params.w_l
    return dh + np.asarray(dscores) @ params.W_m.T


def save_params(path, params: CellParams, **meta) -> None:
    """Checkpoint as ``.npz``: one array per parameter plus format/shape header."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "hidden": params.hidden_size,
        "input_size": params.input_size,
        "n_modalities": params.n_modalities,
        **meta,
    }
    np.savez(Path(path), __header__=np.array(repr(header)), **params.arrays())


def load_params(path) -> tuple[CellParams, dict]:
    import ast

    with np.load(Path(path), allow_pickle=False) as z:
        header = ast.literal_eval(str(z["__header__"]))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {header.get('format')!r}")
        loose = CellParams(**{name: z[name] for name in PARAM_NAMES})
        params = CellParams.from_flat(loose.flat().astype(np.float64), loose.shapes())
    return params, header
