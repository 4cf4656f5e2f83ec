"""Multi-modal multi-label datasets: schema, loading, partitioning and folds.

Modalities are contiguous column blocks of the feature matrix. Labels are
stored as ``{-1, +1}`` integers. All indices (modalities, labels, folds) are
zero-based.
"""

from __future__ import annotations

import csv
import gzip
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import arff
import numpy as np

from .errors import FormatError, SchemaError, ValidationError

#: Published shapes of the benchmark datasets.
KNOWN_SCHEMAS = {
    "emotions": {"n": 593, "labels": 6, "dims": [32, 32, 8]},
    "scene": {"n": 2407, "labels": 6, "dims": [49, 49, 49, 49, 49, 49]},
    "herbs": {"n": 11104, "labels": 29, "dims": [13, 653, 433, 768, 36]},
}


@dataclass(frozen=True)
class ModalitySchema:
    """Per-modality feature counts and extraction costs."""

    dims: tuple[int, ...]
    costs: tuple[float, ...]

    def __init__(self, dims: Sequence[int], costs: Sequence[float] | None = None):
        dims = tuple(int(d) for d in dims)
        if costs is None:
            costs = (1.0,) * len(dims)
        costs = tuple(float(c) for c in costs)
        if len(dims) == 0:
            raise SchemaError("schema needs at least one modality")
        if len(dims) != len(costs):
            raise SchemaError(f"{len(dims)} dims but {len(costs)} costs")
        if any(d < 1 for d in dims):
            raise SchemaError(f"modality dims must be >= 1, got {list(dims)}")
        if any(not np.isfinite(c) or c < 0 for c in costs):
            raise SchemaError(f"modality costs must be finite and >= 0, got {list(costs)}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "costs", costs)

    @property
    def n_modalities(self) -> int:
        return len(self.dims)

    @property
    def total_dim(self) -> int:
        return sum(self.dims)

    @property
    def offsets(self) -> tuple[int, ...]:
        return tuple(int(o) for o in np.concatenate([[0], np.cumsum(self.dims)[:-1]]))

    def block(self, m: int) -> slice:
        """Column slice of modality ``m``."""
        if not 0 <= m < self.n_modalities:
            raise IndexError(f"modality {m} out of range for {self.n_modalities} modalities")
        start = self.offsets[m]
        return slice(start, start + self.dims[m])

    def column_owner(self) -> np.ndarray:
        """Modality index of every feature column."""
        return np.repeat(np.arange(self.n_modalities), self.dims)

    def append(self, dim: int, cost: float) -> "ModalitySchema":
        return ModalitySchema(self.dims + (dim,), self.costs + (cost,))

    def to_dict(self) -> dict:
        return {"dims": list(self.dims), "costs": list(self.costs)}


@dataclass(frozen=True)
class MultiModalDataset:
    """Dense features ``X`` (N x total_dim), labels ``Y`` (N x L) in {-1, +1}."""

    X: np.ndarray
    Y: np.ndarray
    schema: ModalitySchema
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64)
        Y = np.array(self.Y, dtype=np.int64)
        if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
            raise ValidationError(f"X {X.shape} and Y {Y.shape} must be 2-d with equal rows")
        if X.shape[1] != self.schema.total_dim:
            raise SchemaError(
                f"schema covers {self.schema.total_dim} columns, X has {X.shape[1]}"
            )
        if not np.all(np.isfinite(X)):
            bad = np.argwhere(~np.isfinite(X))[0]
            raise ValidationError(f"non-finite feature at row {bad[0]}, column {bad[1]}")
        if not np.all(np.isin(Y, (-1, 1))):
            raise ValidationError("labels must be in {-1, +1}")
        if self.names is not None and len(self.names) != Y.shape[1]:
            raise ValidationError(f"{len(self.names)} label names for {Y.shape[1]} labels")
        X.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        if self.names is not None:
            object.__setattr__(self, "names", tuple(self.names))

    @property
    def n_instances(self) -> int:
        return self.X.shape[0]

    @property
    def n_labels(self) -> int:
        return self.Y.shape[1]

    def modality(self, m: int) -> np.ndarray:
        return self.X[:, self.schema.block(m)]

    def subset(self, rows) -> "MultiModalDataset":
        return MultiModalDataset(self.X[rows], self.Y[rows], self.schema, self.names)

    def with_features(self, X: np.ndarray) -> "MultiModalDataset":
        return MultiModalDataset(X, self.Y, self.schema, self.names)


# ---------------------------------------------------------------------------
# Loading and saving


def _schema_from_spec(schema_spec, n_columns: int | None = None):
    """Return ``(schema, n_labels)`` from a ModalitySchema, dict, or sidecar path."""
    n_labels = None
    if isinstance(schema_spec, (str, Path)):
        with open(schema_spec, encoding="utf-8") as fh:
            schema_spec = json.load(fh)
    if isinstance(schema_spec, dict):
        position = schema_spec.get("label_position", "tail")
        if position != "tail":
            raise SchemaError(f"unsupported label_position {position!r}")
        n_labels = schema_spec.get("labels")
        schema = ModalitySchema(schema_spec["dims"], schema_spec.get("costs"))
    elif isinstance(schema_spec, ModalitySchema):
        schema = schema_spec
    elif isinstance(schema_spec, (list, tuple)):
        schema = ModalitySchema(schema_spec)
    else:
        raise SchemaError(f"cannot interpret schema {schema_spec!r}")
    if n_labels is None and n_columns is not None:
        n_labels = n_columns - schema.total_dim
    return schema, n_labels


def sidecar_path(path) -> Path:
    """Schema sidecar location for a data file: ``data.csv`` -> ``data.schema.json``."""
    path = Path(path)
    name = path.name
    for suffix in (".gz", ".csv", ".arff"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
    return path.with_name(name + ".schema.json")


def normalize_labels(raw: np.ndarray) -> np.ndarray:
    """Map a {0,1} or {-1,+1} label matrix to {-1,+1}."""
    raw = np.asarray(raw, dtype=np.float64)
    values = set(np.unique(raw).tolist())
    if values <= {0.0, 1.0}:
        return np.where(raw > 0, 1, -1).astype(np.int64)
    if values <= {-1.0, 1.0}:
        return raw.astype(np.int64)
    raise ValidationError(f"labels must be {{0,1}} or {{-1,+1}}, found {sorted(values)}")


def _open_text(path: Path):
    if path.name.endswith(".gz"):
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8")
    return open(path, encoding="utf-8", newline="")


def _read_csv(path: Path) -> np.ndarray:
    rows = []
    width = None
    with _open_text(path) as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                values = [float(cell) for cell in row]
            except ValueError as exc:
                raise FormatError(str(exc), line=lineno) from None
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise FormatError(f"expected {width} fields, got {len(values)}", line=lineno)
            rows.append(values)
    if not rows:
        raise FormatError("no data rows", line=None)
    return np.array(rows, dtype=np.float64)


_TRUE = {"1", "true", "yes", "+1"}
_FALSE = {"0", "false", "no", "-1"}


def _arff_value(value, line):
    if value is None:
        return np.nan
    if isinstance(value, str):
        low = value.strip().lower()
        if low in _TRUE:
            return 1.0
        if low in _FALSE:
            return 0.0
        raise FormatError(f"non-numeric value {value!r}", line=line)
    return float(value)


def _read_arff(path: Path):
    with _open_text(path) as fh:
        try:
            decoded = arff.load(fh, return_type=arff.DENSE)
        except arff.ArffException as exc:
            raise FormatError(exc.message if hasattr(exc, "message") else str(exc),
                              line=getattr(exc, "line", None)) from None
    names = [name for name, _ in decoded["attributes"]]
    data = decoded["data"]
    matrix = np.array(
        [[_arff_value(v, i + 1) for v in row] for i, row in enumerate(data)],
        dtype=np.float64,
    )
    return matrix, names


def load_dataset(path, format: str | None = None, schema_spec=None) -> MultiModalDataset:
    """Load a dataset whose label columns trail the feature columns.

    ``schema_spec`` may be a :class:`ModalitySchema`, a list of dims, a sidecar
    dict, or a sidecar path; when omitted, the sidecar next to ``path`` is read.
    ``format`` is inferred from the suffix if not given.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if format is None:
        format = "arff" if ".arff" in path.suffixes else "csv"
    if schema_spec is None:
        schema_spec = sidecar_path(path)
        if not schema_spec.exists():
            raise SchemaError(f"no schema given and no sidecar at {schema_spec}")

    if format == "csv":
        matrix, names = _read_csv(path), None
    elif format == "arff":
        matrix, names = _read_arff(path)
    else:
        raise ValueError(f"unknown format {format!r}")

    schema, n_labels = _schema_from_spec(schema_spec, matrix.shape[1])
    if n_labels is None or n_labels < 1:
        raise SchemaError("label column count could not be determined")
    if schema.total_dim + n_labels != matrix.shape[1]:
        raise SchemaError(
            f"schema declares {schema.total_dim} features + {n_labels} labels, "
            f"file has {matrix.shape[1]} columns"
        )
    X = matrix[:, : schema.total_dim]
    if not np.all(np.isfinite(X)):
        r, c = np.argwhere(~np.isfinite(X))[0]
        raise ValidationError(f"missing or non-finite feature at row {r}, column {c}")
    raw_labels = matrix[:, schema.total_dim:]
    if not np.all(np.isfinite(raw_labels)):
        raise ValidationError("missing label value")
    label_names = names[schema.total_dim:] if names else None
    return MultiModalDataset(X, normalize_labels(raw_labels), schema, label_names)


def save_csv(data: MultiModalDataset, path, n_labels_in_sidecar: bool = True) -> Path:
    """Write features and labels to CSV plus the schema sidecar; returns the sidecar path."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for x, y in zip(data.X, data.Y):
            writer.writerow([repr(float(v)) for v in x] + [str(int(v)) for v in y])
    side = sidecar_path(path)
    payload = data.schema.to_dict()
    if n_labels_in_sidecar:
        payload["labels"] = data.n_labels
    payload["label_position"] = "tail"
    side.write_text(json.dumps(payload) + "\n", encoding="utf-8")
    return side


# ---------------------------------------------------------------------------
# Feature scaling


@dataclass(frozen=True)
class Standardizer:
    """Column z-scoring with statistics from a training fold."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        return cls(mean, np.where(std > 0, std, 1.0))

    def transform(self, data: MultiModalDataset) -> MultiModalDataset:
        return data.with_features((data.X - self.mean) / self.scale)


# ---------------------------------------------------------------------------
# Information-gain partitioning


def entropy(labels: np.ndarray) -> float:
    """Shannon entropy (bits) of a discrete sample."""
    _, counts = np.unique(labels, return_counts=True, axis=0)
    p = counts / counts.sum()
    return float(-(p * np.log2(p)).sum())


def median_split(column: np.ndarray) -> np.ndarray:
    """Binarize at the median; falls back to ``>=`` when ``>`` yields one side."""
    med = np.median(column)
    side = column > med
    if side.all() or not side.any():
        side = column >= med
    return side


def powerset_classes(Y: np.ndarray) -> np.ndarray:
    """Integer id of each row's full label vector."""
    _, inverse = np.unique(Y, axis=0, return_inverse=True)
    return inverse.reshape(-1)


def information_gain(column: np.ndarray, classes: np.ndarray) -> float:
    """Gain of the median-binarized column about ``classes``."""
    side = median_split(column)
    gain = entropy(classes)
    n = len(classes)
    for part in (side, ~side):
        if part.any():
            gain -= part.sum() / n * entropy(classes[part])
    return max(gain, 0.0)


def partition_by_info_gain(X: np.ndarray, Y: np.ndarray, target_dims: Sequence[int],
                           costs: Sequence[float] | None = None):
    """Rank columns by information gain and cut them into blocks of ``target_dims``.

    Returns ``(permutation, schema, gains)``; ``X[:, permutation]`` is the
    partitioned matrix whose first block holds the highest-gain columns. Ties
    keep the original column order.
    """
    X = np.asarray(X, dtype=np.float64)
    if sum(target_dims) != X.shape[1]:
        raise SchemaError(f"target dims sum to {sum(target_dims)}, X has {X.shape[1]} columns")
    classes = powerset_classes(np.asarray(Y))
    gains = np.array([information_gain(X[:, j], classes) for j in range(X.shape[1])])
    # lexsort: last key is primary
    order = np.lexsort((np.arange(X.shape[1]), -gains))
    return order, ModalitySchema(target_dims, costs), gains[order]


def apply_partition(data: MultiModalDataset, target_dims: Sequence[int],
                    costs: Sequence[float] | None = None) -> MultiModalDataset:
    """Re-block ``data`` with :func:`partition_by_info_gain`."""
    order, schema, _ = partition_by_info_gain(data.X, data.Y, target_dims, costs)
    return MultiModalDataset(data.X[:, order], data.Y, schema, data.names)


# ---------------------------------------------------------------------------
# Cross-validation folds


@dataclass(frozen=True)
class FoldSplit:
    fold_count: int
    assignments: np.ndarray = field(repr=False)

    def test_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.fold_count)


def make_folds(n: int, k: int, seed: int = 0) -> FoldSplit:
    """Shuffle ``range(n)`` with ``seed`` and deal instances round-robin into ``k`` folds."""
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= k <= n, got k={k}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    assignments = np.empty(n, dtype=np.int64)
    assignments[perm] = np.arange(n) % k
    assignments.setflags(write=False)
    return FoldSplit(k, assignments)


# ---------------------------------------------------------------------------
# Synthetic data


def make_synthetic(n: int, dims: Sequence[int], n_labels: int,
                   signal: Sequence[float] | None = None, costs: Sequence[float] | None = None,
                   positive_rate: float = 0.35, label_noise: float = 0.3,
                   seed: int = 0) -> MultiModalDataset:
    """Draw a multi-modal multi-label set with controllable per-modality signal.

    Each instance has a latent vector ``z`` of size ``n_labels``; label ``l`` is
    the sign of ``z_l`` plus noise, offset to hit ``positive_rate``. Modality
    ``m`` observes ``signal[m] * z A_m + (1 - signal[m]) * noise``, so a signal
    of 0 gives a pure-noise block. Labels are correlated through a shared factor.
    """
    rng = np.random.default_rng(seed)
    P = len(dims)
    signal = np.full(P, 0.5) if signal is None else np.asarray(signal, dtype=np.float64)
    shared = rng.normal(size=(n, 1))
    z = 0.6 * rng.normal(size=(n, n_labels)) + 0.8 * shared
    score = z + label_noise * rng.normal(size=z.shape)
    cut = np.quantile(score, 1 - positive_rate, axis=0)
    Y = np.where(score > cut, 1, -1)
    blocks = []
    for m, d in enumerate(dims):
        mix = rng.normal(size=(n_labels, d)) / np.sqrt(n_labels)
        blocks.append(signal[m] * z @ mix + (1 - signal[m]) * rng.normal(size=(n, d)))
    return MultiModalDataset(np.hstack(blocks), Y, ModalitySchema(dims, costs))
