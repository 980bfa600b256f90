"""Confusion-matrix accumulation and IoU / mIoU reporting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


class ConfusionMatrix:
    """Dataset-level confusion counts; rows are ground truth, columns are
    predictions. Counts are u64 so shard merging is exact."""

    def __init__(self, n_classes: int):
        self.n_classes = n_classes
        self.counts = np.zeros((n_classes, n_classes), dtype=np.uint64)

    def accumulate(self, pred: np.ndarray, gt: np.ndarray, ignore_index: int = 255) -> None:
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ShapeError(f"pred {pred.shape} vs gt {gt.shape}")
        keep = gt != ignore_index
        if (pred[keep] >= self.n_classes).any() or (pred[keep] < 0).any():
            raise ShapeError(f"prediction outside [0,{self.n_classes})")
        if (gt[keep] >= self.n_classes).any():
            raise ShapeError(f"ground truth label outside [0,{self.n_classes})")
        idx = self.n_classes * gt[keep].astype(np.int64) + pred[keep].astype(np.int64)
        binc = np.bincount(idx, minlength=self.n_classes ** 2)
        self.counts += binc.reshape(self.n_classes, self.n_classes).astype(np.uint64)

    def merge(self, other: "ConfusionMatrix") -> None:
        if other.n_classes != self.n_classes:
            raise ShapeError("cannot merge confusion matrices of different sizes")
        self.counts += other.counts

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class IouReport:
    per_class: np.ndarray      # float, NaN where the class never appeared
    present: np.ndarray        # bool, False for absent classes
    miou: float                # NaN when no class is present
    defined: bool              # False only for an empty matrix


def iou(cm: ConfusionMatrix) -> IouReport:
    """Per-class intersection over union and their mean over present classes.

    A class with zero TP+FP+FN is reported absent (NaN) and excluded from the
    mean; an entirely empty matrix yields miou NaN with defined=False, never a
    silent zero."""
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    denom = tp + fp + fn
    present = denom > 0
    per_class = np.full(cm.n_classes, np.nan)
    per_class[present] = tp[present] / denom[present]
    if present.any():
        return IouReport(per_class, present, float(per_class[present].mean()), True)
    return IouReport(per_class, present, float("nan"), False)


def fmt6(x: float) -> str:
    """Six significant digits, the CSV convention for all float columns."""
    return f"{x:.6g}"


def csv_header(class_names) -> str:
    ious = ",".join(f"iou_{n}" for n in class_names)
    return f"iter,split,miou,{ious},loss_ce,loss_copt,loss_m,loss_st,copt_skipped"


def csv_row(iteration: int, split: str, report: IouReport, losses: dict[str, float],
            copt_skipped: int) -> str:
    cells = [str(iteration), split, fmt6(report.miou)]
    cells += [fmt6(v) for v in report.per_class]
    cells += [fmt6(losses.get(k, 0.0)) for k in ("ce", "copt", "m", "st")]
    cells.append(str(copt_skipped))
    return ",".join(cells)
