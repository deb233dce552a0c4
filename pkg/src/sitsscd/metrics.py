"""Semantic change detection scores: mIoU, BC, SC and SCS.

All scores come from confusion counts, which are plain integer arrays
that can be summed across tiles and merged in any order.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DimensionError, InputError, MetricError


@dataclass
class LabelSeries:
    """Per-date class maps ``(T, H, W)`` with an exclusion mask."""

    labels: np.ndarray
    ignore: Optional[np.ndarray] = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 3:
            raise DimensionError(f"labels must be T,H,W, got {self.labels.shape}")
        if self.ignore is None:
            self.ignore = np.zeros(self.labels.shape, dtype=bool)
        else:
            self.ignore = np.asarray(self.ignore, dtype=bool)
            if self.ignore.shape != self.labels.shape:
                raise DimensionError(f"ignore mask {self.ignore.shape} != labels {self.labels.shape}")

    @property
    def shape(self):
        return self.labels.shape

    def check_classes(self, n_classes: int) -> None:
        used = self.labels[~self.ignore]
        if used.size and (used.min() < 0 or used.max() >= n_classes):
            raise InputError(f"labels outside [0, {n_classes}) on unignored pixels")


@dataclass
class ChangeSeries:
    """Binary change between consecutive dates, ``(T-1, H, W)``."""

    change: np.ndarray
    valid: np.ndarray


def derive_change(series: LabelSeries, ignore: Optional[np.ndarray] = None) -> ChangeSeries:
    """Change where consecutive labels differ; a pair is valid when neither date is ignored.

    ``ignore`` overrides the series' own mask (predictions use the ground
    truth mask).
    """
    labels = series.labels
    if labels.shape[0] < 2:
        raise InputError("change needs at least two dates")
    ign = series.ignore if ignore is None else np.asarray(ignore, dtype=bool)
    valid = ~ign[:-1] & ~ign[1:]
    change = (labels[:-1] != labels[1:]) & valid
    return ChangeSeries(change=change, valid=valid)


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, n_classes: int) -> np.ndarray:
    """``K x K`` counts, rows indexed by ground truth."""
    gt = np.asarray(gt, dtype=np.int64).ravel()
    pred = np.asarray(pred, dtype=np.int64).ravel()
    return np.bincount(gt * n_classes + pred, minlength=n_classes * n_classes).reshape(
        n_classes, n_classes
    )


def iou_from_confusion(conf: np.ndarray) -> np.ndarray:
    """Per-class IoU; NaN for classes absent from both prediction and truth."""
    conf = np.asarray(conf, dtype=np.float64)
    tp = np.diag(conf)
    denom = conf.sum(axis=0) + conf.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, tp / np.where(denom > 0, denom, 1), np.nan)


def _mean_iou(conf: np.ndarray, empty_message: str) -> tuple[float, np.ndarray]:
    iou = iou_from_confusion(conf)
    if np.all(np.isnan(iou)):
        raise MetricError(empty_message)
    return float(np.nanmean(iou)), iou


def _infer_classes(*arrays) -> int:
    return int(max(int(np.max(a)) if np.size(a) else 0 for a in arrays)) + 1


def miou(pred: LabelSeries, gt: LabelSeries, n_classes: Optional[int] = None):
    """Mean IoU over classes present in prediction or truth, ignoring ``gt.ignore``.

    Returns ``(miou, per_class_iou)``.
    """
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    keep = ~gt.ignore
    k = n_classes or _infer_classes(pred.labels[keep], gt.labels[keep])
    conf = confusion_matrix(pred.labels[keep], gt.labels[keep], k)
    return _mean_iou(conf, "no valid pixels")


def _binary_iou(conf2: np.ndarray) -> float:
    tp = conf2[1, 1]
    denom = tp + conf2[0, 1] + conf2[1, 0]
    return 1.0 if denom == 0 else float(tp / denom)


def change_confusion(pred_change: ChangeSeries, gt_change: ChangeSeries) -> np.ndarray:
    if pred_change.change.shape != gt_change.change.shape:
        raise DimensionError(
            f"change maps differ in shape: {pred_change.change.shape} vs {gt_change.change.shape}"
        )
    valid = gt_change.valid
    return confusion_matrix(pred_change.change[valid], gt_change.change[valid], 2)


def bc_score(pred_change: ChangeSeries, gt_change: ChangeSeries) -> float:
    """IoU of the changed class; 1.0 when neither side has any change."""
    return _binary_iou(change_confusion(pred_change, gt_change))


def _sc_selection(gt: LabelSeries, anchor: str):
    gt_change = derive_change(gt)
    if anchor == "later":
        idx = slice(1, None)
    elif anchor == "earlier":
        idx = slice(None, -1)
    else:
        raise InputError(f"unknown SC anchor {anchor!r}")
    return gt_change.change, idx


def sc_confusion(pred: LabelSeries, gt: LabelSeries, n_classes: int, anchor: str = "later") -> np.ndarray:
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    sel, idx = _sc_selection(gt, anchor)
    return confusion_matrix(pred.labels[idx][sel], gt.labels[idx][sel], n_classes)


def sc_score(pred: LabelSeries, gt: LabelSeries, n_classes: Optional[int] = None,
             anchor: str = "later") -> float:
    """Mean IoU restricted to pixel pairs where the ground truth changes.

    Labels are compared at the later date of each pair unless
    ``anchor="earlier"``.
    """
    k = n_classes or _infer_classes(pred.labels, gt.labels)
    conf = sc_confusion(pred, gt, k, anchor)
    return _mean_iou(conf, "no change support")[0]


def scs(sc: float, bc: float) -> float:
    return (sc + bc) / 2


@dataclass
class ScdConfusion:
    """Accumulated counts behind every score; ``+`` merges two accumulators."""

    n_classes: int
    semantic: np.ndarray = None
    change: np.ndarray = None
    semantic_change: np.ndarray = None
    tiles: list = field(default_factory=list)

    def __post_init__(self):
        k = self.n_classes
        if self.semantic is None:
            self.semantic = np.zeros((k, k), dtype=np.int64)
        if self.change is None:
            self.change = np.zeros((2, 2), dtype=np.int64)
        if self.semantic_change is None:
            self.semantic_change = np.zeros((k, k), dtype=np.int64)

    @classmethod
    def from_series(cls, pred: LabelSeries, gt: LabelSeries, n_classes: int,
                    anchor: str = "later") -> "ScdConfusion":
        if pred.shape != gt.shape:
            raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
        gt.check_classes(n_classes)
        keep = ~gt.ignore
        sem = confusion_matrix(pred.labels[keep], gt.labels[keep], n_classes)
        if gt.shape[0] >= 2:
            gt_change = derive_change(gt)
            pred_change = derive_change(pred, ignore=gt.ignore)
            chg = change_confusion(pred_change, gt_change)
            sc = sc_confusion(pred, gt, n_classes, anchor)
        else:
            chg = np.zeros((2, 2), dtype=np.int64)
            sc = np.zeros((n_classes, n_classes), dtype=np.int64)
        tile = (sem, chg, sc)
        return cls(n_classes, sem, chg, sc, [tile])

    def __add__(self, other: "ScdConfusion") -> "ScdConfusion":
        if other.n_classes != self.n_classes:
            raise DimensionError("cannot merge confusions with different class counts")
        return ScdConfusion(
            self.n_classes,
            self.semantic + other.semantic,
            self.change + other.change,
            self.semantic_change + other.semantic_change,
            self.tiles + other.tiles,
        )

    def report(self, aggregation: str = "global") -> "MetricsReport":
        """Scores from the pooled counts, or averaged tile by tile with ``aggregation="per_tile"``."""
        if aggregation == "global":
            m, per_class = _mean_iou(self.semantic, "no valid pixels")
            bc = _binary_iou(self.change)
            sc = _mean_iou(self.semantic_change, "no change support")[0]
        elif aggregation == "per_tile":
            if not self.tiles:
                raise MetricError("no valid pixels")
            per_class = _mean_iou(self.semantic, "no valid pixels")[1]
            m = float(np.mean([_mean_iou(t[0], "no valid pixels")[0] for t in self.tiles]))
            bc = float(np.mean([_binary_iou(t[1]) for t in self.tiles]))
            supported = [t[2] for t in self.tiles if t[2].sum() > 0]
            if not supported:
                raise MetricError("no change support")
            sc = float(np.mean([_mean_iou(c, "no change support")[0] for c in supported]))
        else:
            raise InputError(f"unknown aggregation {aggregation!r}")
        return MetricsReport(
            miou=m,
            per_class_iou=[None if np.isnan(v) else float(v) for v in per_class],
            bc=bc,
            sc=sc,
            scs=scs(sc, bc),
            confusion=self.semantic.copy(),
            change_confusion=self.change.copy(),
            pixel_counts={
                "semantic": int(self.semantic.sum()),
                "change_pairs": int(self.change.sum()),
                "changed_gt": int(self.change[1].sum()),
            },
        )


@dataclass
class MetricsReport:
    miou: float
    per_class_iou: list
    bc: float
    sc: float
    scs: float
    confusion: np.ndarray
    change_confusion: np.ndarray
    pixel_counts: dict

    def to_dict(self) -> dict:
        return {
            "miou": self.miou,
            "per_class_iou": self.per_class_iou,
            "bc": self.bc,
            "sc": self.sc,
            "scs": self.scs,
            "pixel_counts": self.pixel_counts,
            "confusion": self.confusion.tolist(),
            "change_confusion": self.change_confusion.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            miou=d["miou"], per_class_iou=d["per_class_iou"], bc=d["bc"], sc=d["sc"], scs=d["scs"],
            confusion=np.asarray(d.get("confusion", [[0]])),
            change_confusion=np.asarray(d.get("change_confusion", [[0, 0], [0, 0]])),
            pixel_counts=d.get("pixel_counts", {}),
        )

    def percentages(self) -> dict:
        """SCS, SC, BC and mIoU as percentages rounded to one decimal."""
        return {k: round(100 * getattr(self, k.lower()), 1) for k in ("SCS", "SC", "BC", "mIoU")}


TABLE_COLUMNS = ("SCS", "SC", "BC", "mIoU")


def csv_rows(rows: Iterable[tuple[str, dict]], label: str = "name") -> str:
    """Render ``(name, percentages)`` pairs as CSV in table column order."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([label, *TABLE_COLUMNS])
    for name, pct in rows:
        writer.writerow([name, *(f"{pct[c]:.1f}" for c in TABLE_COLUMNS)])
    return buf.getvalue()


def mean_report(reports: Sequence[MetricsReport]) -> dict:
    """Equal-weight mean over folds of the four headline scores (fractions)."""
    if not reports:
        raise MetricError("no reports to average")
    out = {k: float(np.mean([getattr(r, k) for r in reports])) for k in ("miou", "bc", "sc")}
    out["scs"] = scs(out["sc"], out["bc"])
    return out


def argmax_labels(logits: np.ndarray, axis: int = -3) -> np.ndarray:
    """Class index per pixel; ties go to the lowest index."""
    return np.argmax(np.asarray(logits), axis=axis)


def evaluate(pred_logits, gt: LabelSeries, n_classes: Optional[int] = None,
             anchor: str = "later", aggregation: str = "global") -> MetricsReport:
    """Score ``(T, K, H, W)`` logits against a ground-truth series."""
    logits = np.asarray(getattr(pred_logits, "data", pred_logits))
    if logits.ndim != 4:
        raise DimensionError(f"logits must be T,K,H,W, got {logits.shape}")
    t, k, h, w = logits.shape
    if (t, h, w) != gt.shape:
        raise DimensionError(f"logits {logits.shape} do not match labels {gt.shape}")
    if n_classes is not None and n_classes != k:
        raise DimensionError(f"logits carry {k} classes, expected {n_classes}")
    pred = LabelSeries(argmax_labels(logits, axis=1), gt.ignore)
    return ScdConfusion.from_series(pred, gt, k, anchor).report(aggregation)
