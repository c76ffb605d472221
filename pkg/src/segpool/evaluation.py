"""Confusion matrices, UA/WA, fold aggregation with t-based 95% intervals, and report files."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BadLabel, EmptyMatrix, EmptyRow, TooFewFolds

# two-sided 95% Student-t quantiles t_{0.975, df} for df = 1..40
T_975 = (
    12.706205, 4.302653, 3.182446, 2.776445, 2.570582, 2.446912, 2.364624, 2.306004, 2.262157, 2.228139,
    2.200985, 2.178813, 2.160369, 2.144787, 2.131450, 2.119905, 2.109816, 2.100922, 2.093024, 2.085963,
    2.079614, 2.073873, 2.068658, 2.063899, 2.059539, 2.055529, 2.051831, 2.048407, 2.045230, 2.042272,
    2.039513, 2.036933, 2.034515, 2.032245, 2.030108, 2.028094, 2.026192, 2.024394, 2.022691, 2.021075,
)


def t_quantile_975(df: int) -> float:
    if df < 1:
        raise ValueError("degrees of freedom must be >= 1")
    if df <= len(T_975):
        return T_975[df - 1]
    from scipy.stats import t
    return float(t.ppf(0.975, df))


def confusion(true_labels, predicted_labels, k: int) -> np.ndarray:
    """K x K counts; rows are true classes, columns predicted classes."""
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted_labels, dtype=np.int64)
    if t.shape != p.shape or t.ndim != 1:
        raise ValueError("label sequences must be 1-D and of equal length")
    if t.size and (t.min() < 0 or p.min() < 0 or t.max() >= k or p.max() >= k):
        raise BadLabel(f"labels must lie in [0, {k})")
    return np.bincount(t * k + p, minlength=k * k).reshape(k, k)


def unweighted_accuracy(cm: np.ndarray) -> float:
    """Macro-averaged recall over classes."""
    rows = cm.sum(axis=1)
    if np.any(rows < 1):
        raise EmptyRow("every class needs at least one true sample for UA")
    return float(np.mean(np.diag(cm) / rows))


def weighted_accuracy(cm: np.ndarray) -> float:
    """Overall accuracy: trace over total."""
    total = cm.sum()
    if total < 1:
        raise EmptyMatrix("confusion matrix is empty")
    return float(np.trace(cm) / total)


def present_class_ua(cm: np.ndarray) -> float:
    """UA over classes that occur in the true labels (a test fold may miss a class)."""
    rows = cm.sum(axis=1)
    present = rows > 0
    if not present.any():
        raise EmptyMatrix("confusion matrix is empty")
    return float(np.mean(np.diag(cm)[present] / rows[present]))


@dataclass(frozen=True)
class FoldSummary:
    values: tuple
    mean: float
    ci_low: float
    ci_high: float

    def as_dict(self) -> dict:
        d = asdict(self)
        d["values"] = list(self.values)
        return d


def fold_summary(values: Sequence[float]) -> FoldSummary:
    """Mean and Student-t 95% interval over per-fold values."""
    x = np.asarray(values, dtype=np.float64)
    if x.size < 2:
        raise TooFewFolds(f"need at least 2 folds for an interval, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("fold values must be finite")
    mean = float(x.mean())
    half = t_quantile_975(x.size - 1) * float(x.std(ddof=1)) / math.sqrt(x.size)
    return FoldSummary(tuple(float(v) for v in x), mean, mean - half, mean + half)


def _svg(cm: np.ndarray, labels: Sequence[str]) -> str:
    k = len(labels)
    cell, margin = 80, 90
    size = margin + k * cell + 20
    rows = cm.sum(axis=1, keepdims=True)
    frac = np.divide(cm, rows, out=np.zeros(cm.shape), where=rows > 0)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'font-family="sans-serif" font-size="13">']
    out.append(f'<text x="{margin + k * cell / 2:.0f}" y="18" text-anchor="middle">Predicted</text>')
    out.append(f'<text x="16" y="{margin + k * cell / 2:.0f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {margin + k * cell / 2:.0f})">True</text>')
    for j, name in enumerate(labels):
        out.append(f'<text x="{margin + j * cell + cell / 2:.0f}" y="{margin - 10}" '
                   f'text-anchor="middle">{name}</text>')
        out.append(f'<text x="{margin - 6}" y="{margin + j * cell + cell / 2 + 4:.0f}" '
                   f'text-anchor="end">{name}</text>')
    for i in range(k):
        for j in range(k):
            f = frac[i, j]
            shade = int(round(255 - 200 * f))
            x, y = margin + j * cell, margin + i * cell
            text_color = "#ffffff" if f > 0.5 else "#000000"
            out.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                       f'fill="rgb({shade},{shade},255)" stroke="#444444"/>')
            out.append(f'<text x="{x + cell / 2:.0f}" y="{y + cell / 2 + 5:.0f}" text-anchor="middle" '
                       f'fill="{text_color}">{100 * f:.1f}%</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_report(cm: np.ndarray, summaries: dict[str, FoldSummary], out_dir, labels: Sequence[str],
                extra: dict | None = None) -> None:
    """Write report.json, confusion.csv and confusion.svg into ``out_dir``.

    The SVG shows row-normalized percentages. Output carries no
    timestamps, so identical inputs give byte-identical files.
    """
    out = Path(out_dir)
    if not out.is_dir():
        raise FileNotFoundError(f"report directory {out} does not exist")
    report = {
        "labels": list(labels),
        "confusion": cm.tolist(),
        "summaries": {name: s.as_dict() for name, s in summaries.items()},
    }
    if extra:
        report.update(extra)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    lines = ["true\\predicted," + ",".join(labels)]
    lines += [f"{name}," + ",".join(str(int(v)) for v in row) for name, row in zip(labels, cm)]
    (out / "confusion.csv").write_text("\n".join(lines) + "\n")
    (out / "confusion.svg").write_text(_svg(cm, labels))
