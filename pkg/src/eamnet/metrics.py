"""Binary segmentation metrics: IoU, Dice, pixel accuracy, precision.

All four are computed per image from the confusion counts and aggregated as
plain means over images. Two empty masks count as a perfect match (all four
metrics 1); other zero-denominator cases score 0.
"""

from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ShapeError


def _as_binary_array(x, name):
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    arr = np.asarray(x, dtype=np.float64)
    if not np.isin(arr, (0.0, 1.0)).all():
        raise ValueError(f"{name} must be binary (values in {{0, 1}})")
    return arr


def confusion_counts(pred_mask, target):
    """(TP, FP, FN, TN) pixel counts for one binary mask pair."""
    p = _as_binary_array(pred_mask, "prediction")
    t = _as_binary_array(target, "target")
    if p.shape != t.shape:
        raise ShapeError(f"mask shapes differ: {p.shape} vs {t.shape}")
    tp = float(((p == 1) & (t == 1)).sum())
    fp = float(((p == 1) & (t == 0)).sum())
    fn = float(((p == 0) & (t == 1)).sum())
    tn = float(((p == 0) & (t == 0)).sum())
    return tp, fp, fn, tn


def _ratio(num, den):
    return num / den if den > 0 else 0.0


def compute_metrics(pred_mask, target):
    """IoU, Dice, accuracy and precision for one binary mask pair."""
    tp, fp, fn, tn = confusion_counts(pred_mask, target)
    if tp + fp + fn == 0:
        # nothing predicted and nothing to find
        return {"iou": 1.0, "dice": 1.0, "acc": 1.0, "precision": 1.0}
    return {
        "iou": _ratio(tp, tp + fp + fn),
        "dice": _ratio(2 * tp, 2 * tp + fp + fn),
        "acc": _ratio(tp + tn, tp + fp + fn + tn),
        "precision": _ratio(tp, tp + fp),
    }


METRIC_NAMES = ("iou", "dice", "acc", "precision")


@dataclass
class MetricsReport:
    iou: float
    dice: float
    acc: float
    precision: float
    n_images: int
    per_image: list = field(default_factory=list)

    @classmethod
    def from_rows(cls, rows):
        """rows: list of (sample_id, metrics dict) in evaluation order."""
        if not rows:
            raise ValueError("cannot aggregate an empty set of rows")
        means = {m: sum(r[1][m] for r in rows) / len(rows) for m in METRIC_NAMES}
        return cls(n_images=len(rows), per_image=list(rows), **means)

    def aggregate(self):
        return {m: getattr(self, m) for m in METRIC_NAMES}
