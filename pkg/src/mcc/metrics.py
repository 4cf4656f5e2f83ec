"""Multi-label metrics over {-1,+1} prediction matrices and fold aggregation."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

METRICS = ("micro_f1", "hamming_loss", "subset_accuracy", "cost_average")
#: True where larger is better.
HIGHER_IS_BETTER = {"micro_f1": True, "hamming_loss": False,
                    "subset_accuracy": True, "cost_average": False, "macro_f1": True}
TITLES = {"micro_f1": "Micro-average", "hamming_loss": "Hamming-Loss",
          "subset_accuracy": "Subset-Accuracy", "cost_average": "Cost-average",
          "macro_f1": "Macro-F1"}


def _pair(Z, Y):
    Z = np.asarray(Z)
    Y = np.asarray(Y)
    if Z.shape != Y.shape:
        raise ValueError(f"prediction shape {Z.shape} != label shape {Y.shape}")
    return Z, Y


def _f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2.0 * tp / denom


def micro_f1(Z, Y) -> float:
    """F1 of TP/FP/FN pooled over every cell, +1 positive; 1.0 if there is nothing to find."""
    Z, Y = _pair(Z, Y)
    tp = int(np.sum((Z == 1) & (Y == 1)))
    fp = int(np.sum((Z == 1) & (Y != 1)))
    fn = int(np.sum((Z != 1) & (Y == 1)))
    return _f1(tp, fp, fn)


def macro_f1(Z, Y) -> float:
    Z, Y = _pair(Z, Y)
    scores = []
    for l in range(Y.shape[1]):
        z, y = Z[:, l], Y[:, l]
        scores.append(_f1(int(np.sum((z == 1) & (y == 1))), int(np.sum((z == 1) & (y != 1))),
                          int(np.sum((z != 1) & (y == 1)))))
    return float(np.mean(scores))


def hamming_loss(Z, Y) -> float:
    Z, Y = _pair(Z, Y)
    return float(np.mean(Z != Y))


def subset_accuracy(Z, Y) -> float:
    Z, Y = _pair(Z, Y)
    return float(np.mean(np.all(Z == Y, axis=1)))


def evaluate(Z, Y, cost: float | None = None, macro: bool = False) -> dict:
    """Per-fold metric dictionary."""
    out = {"micro_f1": micro_f1(Z, Y), "hamming_loss": hamming_loss(Z, Y),
           "subset_accuracy": subset_accuracy(Z, Y)}
    if cost is not None:
        out["cost_average"] = float(cost)
    if macro:
        out["macro_f1"] = macro_f1(Z, Y)
    return out


@dataclass(frozen=True)
class MetricReport:
    """``(mean, std)`` per metric over folds; std is the population std."""

    stats: dict
    n_folds: int

    def __getitem__(self, metric):
        return self.stats[metric]

    @property
    def micro_f1(self):
        return self.stats["micro_f1"]

    @property
    def hamming_loss(self):
        return self.stats["hamming_loss"]

    @property
    def subset_accuracy(self):
        return self.stats["subset_accuracy"]

    @property
    def cost_average(self):
        return self.stats.get("cost_average")

    def formatted(self, metric) -> str:
        mean, std = self.stats[metric]
        return f"{mean:.3f}±{std:.3f}"

    def to_dict(self) -> dict:
        return {k: {"mean": m, "std": s} for k, (m, s) in self.stats.items()} | {"n_folds": self.n_folds}


def cv_aggregate(per_fold) -> MetricReport:
    """Mean and population std of each metric across fold dictionaries."""
    per_fold = list(per_fold)
    if len(per_fold) < 2:
        raise ValueError(f"need at least 2 folds, got {len(per_fold)}")
    keys = [k for k in per_fold[0] if all(k in f for f in per_fold)]
    stats = {}
    for k in keys:
        v = np.array([f[k] for f in per_fold], dtype=np.float64)
        stats[k] = (float(v.mean()), float(v.std(ddof=0)))
    return MetricReport(stats, len(per_fold))


def best_rows(reports: dict, metric: str) -> set:
    """Names whose rounded mean is best for ``metric`` (ties all win)."""
    values = {name: round(r[metric][0], 3) for name, r in reports.items() if metric in r.stats}
    if not values:
        return set()
    target = max(values.values()) if HIGHER_IS_BETTER[metric] else min(values.values())
    return {name for name, v in values.items() if v == target}


def markdown_table(reports: dict, metrics=METRICS) -> str:
    """One row per algorithm, ``mean±std`` cells, best per column in bold."""
    metrics = [m for m in metrics if any(m in r.stats for r in reports.values())]
    arrows = {m: "↑" if HIGHER_IS_BETTER[m] else "↓" for m in metrics}
    lines = ["| Algorithm | " + " | ".join(f"{TITLES[m]}{arrows[m]}" for m in metrics) + " |",
             "|---|" + "---|" * len(metrics)]
    best = {m: best_rows(reports, m) for m in metrics}
    for name, r in reports.items():
        cells = []
        for m in metrics:
            if m not in r.stats:
                cells.append("")
                continue
            cell = r.formatted(m)
            cells.append(f"**{cell}**" if name in best[m] and len(reports) > 1 else cell)
        lines.append(f"| {name} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def folds_csv(per_fold, metrics=None) -> str:
    """Per-fold metrics as CSV text with ``repr`` floats (stable across runs)."""
    per_fold = list(per_fold)
    metrics = metrics or list(per_fold[0])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fold", *metrics])
    for i, f in enumerate(per_fold):
        w.writerow([i, *(repr(float(f[m])) for m in metrics)])
    return buf.getvalue()


def report_csv(reports: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["algorithm", "metric", "mean", "std", "n_folds"])
    for name, r in reports.items():
        for m, (mean, std) in r.stats.items():
            w.writerow([name, m, repr(mean), repr(std), r.n_folds])
    return buf.getvalue()
