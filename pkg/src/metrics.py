# src/metrics.py
# Confusion counts, per-class accuracy / IoU, and the metrics CSV.
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from src.tensor_core import ContractError

# IoU quality bands, lowest first
IOU_BANDS = (("RED", 0.5), ("ORANGE", 0.7), ("YELLOW", 0.85))


@dataclass
class ConfusionCounts:
    matrix: np.ndarray  # N x N, rows = ground truth, columns = prediction

    @property
    def n_classes(self) -> int:
        return self.matrix.shape[0]

    @property
    def tp(self) -> np.ndarray:
        return np.diag(self.matrix)

    @property
    def fp(self) -> np.ndarray:
        return self.matrix.sum(axis=0) - self.tp

    @property
    def fn(self) -> np.ndarray:
        return self.matrix.sum(axis=1) - self.tp

    def merge(self, other: "ConfusionCounts") -> "ConfusionCounts":
        if other.n_classes != self.n_classes:
            raise ContractError(f"cannot merge counts over {self.n_classes} and {other.n_classes} classes")
        return ConfusionCounts(self.matrix + other.matrix)

    __add__ = merge

    @classmethod
    def empty(cls, n_classes: int) -> "ConfusionCounts":
        return cls(np.zeros((n_classes, n_classes), dtype=np.int64))


def confusion_counts(pred: np.ndarray, gt: np.ndarray, n_classes: int) -> ConfusionCounts:
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    if pred.shape != gt.shape:
        raise ContractError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    for name, arr in (("prediction", pred), ("ground truth", gt)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ContractError(f"{name} ids must lie in 0..{n_classes - 1}")
    flat = n_classes * gt.reshape(-1) + pred.reshape(-1)
    matrix = np.bincount(flat, minlength=n_classes * n_classes).reshape(n_classes, n_classes)
    return ConfusionCounts(matrix.astype(np.int64))


@dataclass
class MetricsReport:
    acc: np.ndarray  # per class, NaN where the class never occurs in the ground truth
    iou: np.ndarray  # per class, NaN where the class is absent from both maps
    m_acc: float
    m_iou: float
    a_acc: float
    counts: ConfusionCounts

    def to_frame(self, class_names=None) -> pd.DataFrame:
        names = list(class_names) if class_names is not None else [str(i) for i in range(len(self.acc))]
        df = pd.DataFrame({"class": names, "Acc": self.acc, "IoU": self.iou})
        summary = pd.DataFrame(
            [{"class": "mean", "Acc": self.m_acc, "IoU": self.m_iou}, {"class": "overall", "Acc": self.a_acc, "IoU": np.nan}]
        )
        return pd.concat([df, summary], ignore_index=True)

    def to_csv(self, path=None, class_names=None) -> str:
        text = self.to_frame(class_names).to_csv(index=False, float_format="%.6f", lineterminator="\n")
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as f:
                f.write(text)
        return text


def report_from_counts(counts: ConfusionCounts) -> MetricsReport:
    tp = counts.tp.astype(np.float64)
    gt_total = tp + counts.fn
    union = tp + counts.fp + counts.fn
    with np.errstate(divide="ignore", invalid="ignore"):
        acc = np.where(gt_total > 0, tp / gt_total, np.nan)
        iou = np.where(union > 0, tp / union, np.nan)
    total = counts.matrix.sum()
    return MetricsReport(
        acc=acc,
        iou=iou,
        m_acc=float(np.nanmean(acc)) if np.isfinite(acc).any() else float("nan"),
        m_iou=float(np.nanmean(iou)) if np.isfinite(iou).any() else float("nan"),
        a_acc=float(tp.sum() / total) if total else float("nan"),
        counts=counts,
    )


def metrics(pred: np.ndarray, gt: np.ndarray, n_classes: int) -> MetricsReport:
    return report_from_counts(confusion_counts(pred, gt, n_classes))


def iou_band(value: float) -> str:
    if value is None or np.isnan(value):
        return ""
    for name, upper in IOU_BANDS:
        if value < upper:
            return name
    return "GREEN"
