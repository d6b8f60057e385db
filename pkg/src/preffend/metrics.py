"""Accuracy, macro F1 and per-class scores for the fake (1) / real (0) task."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

THRESHOLD = 0.5


@dataclass
class Metrics:
    accuracy: float
    macro_f1: float
    precision_fake: float
    recall_fake: float
    f1_fake: float
    precision_real: float
    recall_real: float
    f1_real: float
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def count(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> dict:
        return asdict(self)


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def from_confusion(tp: int, fp: int, fn: int, tn: int) -> Metrics:
    """Metrics from counts, with fake as the positive class."""
    total = tp + fp + fn + tn
    pf, rf, ff = _prf(tp, fp, fn)
    pr, rr, fr = _prf(tn, fn, fp)
    acc = (tp + tn) / total if total else 0.0
    return Metrics(acc, (ff + fr) / 2, pf, rf, ff, pr, rr, fr, tp, fp, fn, tn)


def compute_metrics(labels, probs, threshold: float = THRESHOLD) -> Metrics:
    """Fake iff probability >= threshold."""
    labels = np.asarray(labels).astype(int)
    preds = (np.asarray(probs, dtype=float) >= threshold).astype(int)
    if labels.shape != preds.shape:
        raise ValueError(f"{labels.shape[0]} labels for {preds.shape[0]} predictions")
    tp = int(np.sum((preds == 1) & (labels == 1)))
    fp = int(np.sum((preds == 1) & (labels == 0)))
    fn = int(np.sum((preds == 0) & (labels == 1)))
    tn = int(np.sum((preds == 0) & (labels == 0)))
    return from_confusion(tp, fp, fn, tn)
