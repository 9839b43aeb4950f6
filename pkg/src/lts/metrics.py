"""Confusion matrices and class-wise IoU reports.

A class with no ground-truth points and no predictions (TP + FP + FN = 0) is
absent: it has no IoU and does not enter the mean. Background is counted in the
matrix but left out of the mean unless asked for.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import DEFAULT_CLASS_NAMES
from .scan_io import PathLike

BACKGROUND = 0
CSV_HEADER = "class,tp,fp,fn,iou"


@dataclass
class ConfusionMatrix:
    """Counts indexed ``[ground_truth, prediction]``."""

    counts: np.ndarray

    @classmethod
    def zeros(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.counts.shape != other.counts.shape:
            raise ValueError("cannot merge confusion matrices of different sizes")
        return ConfusionMatrix(self.counts + other.counts)


def accumulate(cm: ConfusionMatrix, gt, pred) -> ConfusionMatrix:
    gt = np.asarray(gt).astype(np.int64).ravel()
    pred = np.asarray(pred).astype(np.int64).ravel()
    if gt.shape != pred.shape:
        raise ValueError(f"ground truth has {gt.size} labels, prediction has {pred.size}")
    c = cm.num_classes
    if gt.size:
        for name, arr in (("ground truth", gt), ("prediction", pred)):
            if arr.min() < 0 or arr.max() >= c:
                raise ValueError(f"{name} label {int(arr.max())} out of range for {c} classes")
    counts = np.bincount(gt * c + pred, minlength=c * c).reshape(c, c)
    return ConfusionMatrix(cm.counts + counts)


@dataclass
class ClassIoU:
    name: str
    tp: int
    fp: int
    fn: int
    iou: float | None  # None when the class is absent


@dataclass
class IoUReport:
    classes: list[ClassIoU]
    mean_iou: float | None
    mean_over: tuple[str, ...] = field(default_factory=tuple)

    def __getitem__(self, name: str) -> ClassIoU:
        for entry in self.classes:
            if entry.name == name:
                return entry
        raise KeyError(name)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.classes)

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(CSV_HEADER + "\n")
        for c in self.classes:
            iou = "-" if c.iou is None else f"{c.iou:.6f}"
            out.write(f"{c.name},{c.tp},{c.fp},{c.fn},{iou}\n")
        mean = "-" if self.mean_iou is None else f"{self.mean_iou:.6f}"
        out.write(f"mean,,,,{mean}\n")
        return out.getvalue()

    def to_table(self) -> str:
        lines = [f"{'class':<12}{'TP':>10}{'FP':>10}{'FN':>10}{'IoU':>9}"]
        for c in self.classes:
            iou = "-" if c.iou is None else f"{100 * c.iou:.1f}"
            mark = "" if c.name in self.mean_over else "*"
            lines.append(f"{c.name + mark:<12}{c.tp:>10}{c.fp:>10}{c.fn:>10}{iou:>9}")
        mean = "-" if self.mean_iou is None else f"{100 * self.mean_iou:.1f}"
        lines.append(f"{'mean IoU':<42}{mean:>9}")
        return "\n".join(lines)


def iou_report(cm: ConfusionMatrix, class_names: Sequence[str] = DEFAULT_CLASS_NAMES,
               include_background: bool = False) -> IoUReport:
    counts = cm.counts
    if len(class_names) != cm.num_classes:
        raise ValueError(f"{len(class_names)} names for a {cm.num_classes}-class matrix")
    tp = np.diag(counts)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    entries = []
    for c, name in enumerate(class_names):
        denom = int(tp[c] + fp[c] + fn[c])
        iou = float(tp[c]) / denom if denom else None
        entries.append(ClassIoU(str(name), int(tp[c]), int(fp[c]), int(fn[c]), iou))
    used = [e for i, e in enumerate(entries)
            if e.iou is not None and (include_background or i != BACKGROUND)]
    mean = sum(e.iou for e in used) / len(used) if used else None
    return IoUReport(entries, mean, tuple(e.name for e in used))


@dataclass
class ReportDelta:
    deltas: dict[str, float]
    notes: list[str]


def compare_reports(a: IoUReport, b: IoUReport) -> ReportDelta:
    """Per-class ``b - a`` for classes present in both reports."""
    if a.names != b.names:
        raise ValueError(f"class sets differ: {a.names} vs {b.names}")
    deltas, notes = {}, []
    for ca, cb in zip(a.classes, b.classes):
        if ca.iou is None or cb.iou is None:
            if ca.iou is not None or cb.iou is not None:
                side = "first" if ca.iou is None else "second"
                notes.append(f"{ca.name}: absent in {side} report, no delta")
            continue
        deltas[ca.name] = cb.iou - ca.iou
    return ReportDelta(deltas, notes)


def format_deltas(delta: ReportDelta) -> str:
    lines = [f"{'class':<12}{'delta IoU':>10}"]
    for name, d in delta.deltas.items():
        lines.append(f"{name:<12}{100 * d:>+10.1f}")
    lines.extend(f"note: {n}" for n in delta.notes)
    return "\n".join(lines)


def write_report(report: IoUReport, path: PathLike) -> None:
    Path(path).write_text(report.to_csv())


def read_report(path: PathLike, include_background: bool = False) -> IoUReport:
    entries = []
    mean = None
    for line in Path(path).read_text().splitlines():
        if not line or line == CSV_HEADER:
            continue
        name, tp, fp, fn, iou = line.split(",")
        if name == "mean":
            mean = None if iou == "-" else float(iou)
            continue
        entries.append(ClassIoU(name, int(tp), int(fp), int(fn), None if iou == "-" else float(iou)))
    mean_over = tuple(e.name for i, e in enumerate(entries)
                      if e.iou is not None and (include_background or i != BACKGROUND))
    return IoUReport(entries, mean, mean_over)
