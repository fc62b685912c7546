"""Binary classification metrics and per-hospital report rendering.

The positive class is covid (label 1). Zero-denominator cases score 0 and
are flagged rather than raising, so degenerate predictors still produce a
full report row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .validation import check_labels


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ValidationError(f"{name} must be a non-negative integer, got {v}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def as_array(self) -> np.ndarray:
        """Rows are true class (0, 1), columns are predicted class."""
        return np.array([[self.tn, self.fp], [self.fn, self.tp]], dtype=np.int64)


@dataclass(frozen=True)
class MetricsReport:
    ca: float
    pre: float
    rec: float
    f1: float
    degenerate: tuple[str, ...] = ()


def confusion(predictions, labels) -> ConfusionMatrix:
    """Exact confusion counts for binary predictions against labels."""
    preds = check_labels(predictions)
    y = check_labels(labels)
    if preds.shape[0] != y.shape[0]:
        raise ValidationError(
            f"prediction count {preds.shape[0]} does not match label count {y.shape[0]}"
        )
    if preds.shape[0] == 0:
        raise ValidationError("cannot score an empty prediction vector")
    tp = int(np.sum((preds == 1) & (y == 1)))
    fp = int(np.sum((preds == 1) & (y == 0)))
    tn = int(np.sum((preds == 0) & (y == 0)))
    fn = int(np.sum((preds == 0) & (y == 1)))
    return ConfusionMatrix(tp=tp, fp=fp, tn=tn, fn=fn)


def scores(cm: ConfusionMatrix) -> MetricsReport:
    """Accuracy, precision, recall, and F1 from confusion counts."""
    if cm.total < 1:
        raise ValidationError("confusion matrix has no observations")
    degenerate = []
    ca = (cm.tp + cm.tn) / cm.total
    if cm.tp + cm.fp > 0:
        pre = cm.tp / (cm.tp + cm.fp)
    else:
        pre = 0.0
        degenerate.append("pre")
    if cm.tp + cm.fn > 0:
        rec = cm.tp / (cm.tp + cm.fn)
    else:
        rec = 0.0
        degenerate.append("rec")
    if pre + rec > 0:
        f1 = 2.0 * pre * rec / (pre + rec)
    else:
        f1 = 0.0
        degenerate.append("f1")
    return MetricsReport(ca=ca, pre=pre, rec=rec, f1=f1, degenerate=tuple(degenerate))


def render_report(rows: list[tuple[str, MetricsReport]]) -> str:
    """Aligned per-hospital table: Hospital | CA (%) | F1 (0..1) | PRE (%) | REC (%)."""
    header = ("Hospital", "CA (%)", "F1 (0..1)", "PRE (%)", "REC (%)")
    table = [header]
    for label, rep in rows:
        table.append(
            (
                str(label),
                f"{rep.ca * 100:.1f}",
                f"{rep.f1:.2f}",
                f"{rep.pre * 100:.1f}",
                f"{rep.rec * 100:.1f}",
            )
        )
    widths = [max(len(row[c]) for row in table) for c in range(len(header))]
    lines = []
    for row in table:
        cells = [row[0].ljust(widths[0])] + [
            row[c].rjust(widths[c]) for c in range(1, len(header))
        ]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines)
