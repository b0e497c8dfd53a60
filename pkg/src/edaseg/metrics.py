"""Confusion-matrix segmentation metrics."""

from __future__ import annotations

import numpy as np

from edaseg.lanesynth import NUM_CLASSES


class ConfusionMatrix:
    """Pixel counts; rows are ground truth, columns are predictions.

    Pixels whose ground truth is ``ignore_index`` are never counted.
    """

    def __init__(self, num_classes=NUM_CLASSES, ignore_index=0):
        self.num_classes = num_classes
        self.ignore_index = ignore_index
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def update(self, pred, truth):
        pred = np.asarray(pred)
        truth = np.asarray(truth)
        if pred.shape != truth.shape:
            raise ValueError(f"prediction shape {pred.shape} != ground truth shape {truth.shape}")
        k = self.num_classes
        for name, a in (("prediction", pred), ("ground truth", truth)):
            if a.size and (a.min() < 0 or a.max() >= k):
                raise ValueError(f"{name} values must lie in 0..{k - 1}")
        keep = truth != self.ignore_index
        idx = truth[keep].astype(np.int64) * k + pred[keep].astype(np.int64)
        self.counts += np.bincount(idx, minlength=k * k).reshape(k, k)
        return self

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def iou_per_class(self) -> np.ndarray:
        """IoU per class; NaN for the ignored class and for classes with an empty union."""
        tp = np.diag(self.counts).astype(np.float64)
        fp = self.counts.sum(axis=0) - tp
        fn = self.counts.sum(axis=1) - tp
        denom = tp + fp + fn
        with np.errstate(invalid="ignore", divide="ignore"):
            iou = np.where(denom > 0, tp / denom, np.nan)
        if self.ignore_index is not None:
            iou[self.ignore_index] = np.nan
        return iou

    def miou(self) -> float:
        iou = self.iou_per_class()
        valid = ~np.isnan(iou)
        return float(iou[valid].mean()) if valid.any() else float("nan")


def confusion_update(cm: ConfusionMatrix, pred, truth) -> ConfusionMatrix:
    return cm.update(pred, truth)


def iou_per_class(cm: ConfusionMatrix):
    return cm.iou_per_class()


def miou(cm: ConfusionMatrix) -> float:
    return cm.miou()
