"""mIoU, frequency-weighted mIoU and accuracy from a confusion matrix."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ConfusionMatrix, ContractError


@dataclass(frozen=True)
class MetricReport:
    miou: float
    fw_miou: float
    acc: float
    per_class_iou: tuple[tuple[str, float | None], ...]

    def to_json(self) -> dict:
        return {
            "miou": self.miou,
            "fw_miou": self.fw_miou,
            "acc": self.acc,
            "per_class_iou": [{"label": name, "iou": v} for name, v in self.per_class_iou],
        }


def per_class_iou(counts: np.ndarray) -> np.ndarray:
    """IoU per class as a fraction; NaN where a class is absent from both truth and prediction."""
    c = np.asarray(counts, dtype=np.float64)
    tp = np.diag(c)
    union = c.sum(axis=1) + c.sum(axis=0) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, tp / union, np.nan)


def evaluate(cm: ConfusionMatrix, include_background: bool = True) -> MetricReport:
    """Score a confusion matrix; all values in percent.

    Classes with an empty union have no IoU and are left out of the mIoU
    mean. They have no ground-truth points, so they never affect fw mIoU.
    With ``include_background=False`` class 0 is dropped from the mean IoU
    and from the frequency weights, but still counts toward accuracy.
    """
    counts = cm.counts
    n_total = int(counts.sum())
    if n_total == 0:
        raise ContractError("cannot evaluate an empty confusion matrix")
    iou = per_class_iou(counts)
    t = counts.sum(axis=1).astype(np.float64)
    scored = np.ones(len(iou), dtype=bool)
    if not include_background:
        scored[0] = False
    defined = scored & ~np.isnan(iou)
    miou = float(iou[defined].mean()) if defined.any() else math.nan
    weight_total = float(t[scored].sum())
    fw = float((t[defined] * iou[defined]).sum() / weight_total) if weight_total > 0 else math.nan
    acc = float(np.trace(counts) / n_total)
    names = cm.label_space.labels if cm.label_space is not None else tuple(str(i) for i in range(len(iou)))
    per_class = tuple(
        (names[i], None if np.isnan(iou[i]) else 100.0 * float(iou[i])) for i in range(len(iou))
    )
    return MetricReport(100.0 * miou, 100.0 * fw, 100.0 * acc, per_class)
