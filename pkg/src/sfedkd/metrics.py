"""Evaluation and forgetting diagnostics.

Class-wise accuracy vectors use NaN for classes absent from the test set;
downstream reductions skip those entries instead of counting them as zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .model import ModelParams, forward


@dataclass
class EvalTrace:
    """Ordered accuracy checkpoints: (tag, class-wise vector, top-1)."""

    checkpoints: list[tuple[str, np.ndarray, float]] = field(default_factory=list)

    def add(self, tag: str, classwise: np.ndarray, top1: float) -> None:
        self.checkpoints.append((tag, np.asarray(classwise, dtype=np.float64), float(top1)))

    def __len__(self) -> int:
        return len(self.checkpoints)


def evaluate(params: ModelParams, dataset: Dataset) -> tuple[float, np.ndarray]:
    """Top-1 accuracy and the per-class accuracy vector on a dataset.

    Prediction is the argmax of the logits, ties to the lowest class index.
    Classes with no test samples get NaN.
    """
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    preds = forward(params, dataset.features).argmax(axis=1)
    correct = preds == dataset.labels
    classwise = np.full(dataset.c_total, np.nan)
    for c in range(dataset.c_total):
        mask = dataset.labels == c
        if mask.any():
            classwise[c] = correct[mask].mean()
    return float(correct.mean()), classwise


def consistency(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity between two class-wise accuracy vectors.

    Entries that are NaN in either vector are dropped. If either remaining
    vector is all-zero the similarity is undefined; 0.0 is returned as the
    documented sentinel.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("vectors must have equal length")
    keep = ~(np.isnan(a) | np.isnan(b))
    a, b = a[keep], b[keep]
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def forgetting_measure(trace: EvalTrace) -> float:
    """Mean over classes of the peak historical accuracy minus the final one.

    Uses all checkpoints but the last as history; classes without finite
    entries are skipped. Negative when the final model beats every earlier
    peak on average.
    """
    if len(trace) < 2:
        raise ValueError("need at least two checkpoints")
    hist = np.stack([cw for _, cw, _ in trace.checkpoints])
    final = hist[-1]
    drops = []
    for c in range(hist.shape[1]):
        past = hist[:-1, c]
        if np.isnan(final[c]) or np.isnan(past).all():
            continue
        drops.append(np.nanmax(past) - final[c])
    if not drops:
        raise ValueError("no class has finite accuracy entries")
    return float(np.mean(drops))
