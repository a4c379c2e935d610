"""Confusion counts and the accuracy / precision / recall / F1 derived from them.

The positive class is COVID (label 1). A ratio whose denominator is zero is
reported as ``None`` rather than being forced to 0 or 1.
"""
import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

THRESHOLD = 0.5


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    confusion: ConfusionMatrix

    def to_record(self):
        """Single-line JSON record."""
        d = asdict(self)
        d.update(d.pop("confusion"))
        return json.dumps(d, sort_keys=True)

    def table(self, epochs=None):
        def pct(v):
            return "undefined" if v is None else f"{100 * v:.2f}%"

        head = ["Epochs", "Accuracy", "Precision", "F1-Measure", "Recall"]
        row = ["-" if epochs is None else str(epochs), pct(self.accuracy), pct(self.precision), pct(self.f1), pct(self.recall)]
        widths = [max(len(h), len(r)) for h, r in zip(head, row)]
        fmt = " | ".join(f"{{:<{w}}}" for w in widths)
        cm = self.confusion
        lines = [fmt.format(*head), "-+-".join("-" * w for w in widths), fmt.format(*row)]
        lines.append(f"TP={cm.tp} FP={cm.fp} TN={cm.tn} FN={cm.fn}")
        return "\n".join(lines)


def confusion(preds, targets, threshold=THRESHOLD):
    """Tally a confusion matrix; a probability equal to ``threshold`` counts as positive."""
    preds = np.asarray(preds).reshape(-1)
    targets = np.asarray(targets).reshape(-1)
    if preds.shape != targets.shape:
        raise ValueError(f"{preds.size} predictions but {targets.size} targets")
    if not np.all((targets == 0) | (targets == 1)):
        raise ValueError("targets must be 0 or 1")
    pos = preds >= threshold
    actual = targets == 1
    return ConfusionMatrix(
        tp=int(np.sum(pos & actual)),
        fp=int(np.sum(pos & ~actual)),
        tn=int(np.sum(~pos & ~actual)),
        fn=int(np.sum(~pos & actual)),
    )


def _ratio(num, den):
    return None if den == 0 else num / den


def compute_metrics(cm):
    if cm.total == 0:
        raise ValueError("cannot compute metrics from an empty confusion matrix")
    precision = _ratio(cm.tp, cm.tp + cm.fp)
    recall = _ratio(cm.tp, cm.tp + cm.fn)
    if precision is None or recall is None:
        f1 = None
    else:
        f1 = _ratio(2 * precision * recall, precision + recall)
    return MetricsReport((cm.tp + cm.tn) / cm.total, precision, recall, f1, cm)
