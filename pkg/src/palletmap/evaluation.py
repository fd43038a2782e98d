"""Detection metrics: greedy matching, confusion matrices, F1 curves and mAP.

Conventions
-----------
* Matching is greedy: predictions are visited by descending confidence
  (stable, so equal confidences keep input order) and each claims the
  still-free ground truth with the highest IoU at or above the threshold.
  IoU ties go to the lowest ground-truth index.
* AP uses 101-point interpolation: the precision envelope (max precision
  at recall >= r) is sampled at r = 0.00, 0.01, ..., 1.00 and averaged.
  The curve starts from the point (recall 0, precision 1), so a detector
  whose first prediction is wrong still gets full precision at r = 0.
  A class without predictions scores AP 0.
* Classes without any ground truth have no AP; they are left out of the
  mAP mean.
* "Accuracy" is the row-normalized confusion-matrix diagonal (per-class
  recall at a fixed confidence threshold, 0.25 by default).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from palletmap.annotation_io import Detection, GroundTruth
from palletmap.geometry import iou

COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))
RECALL_GRID = tuple(k / 100 for k in range(101))
DEFAULT_CONF_GRID = tuple(k / 100 for k in range(101))
DEFAULT_CONF_THRESH = 0.25

ImagePreds = Sequence[Detection]
ImageGts = Sequence[GroundTruth]


@dataclass(frozen=True)
class MatchResult:
    """``pairs[i] = (pred_index, gt_index or None, iou)`` in prediction order."""

    pairs: tuple[tuple[int, int | None, float], ...]
    unmatched_gts: tuple[int, ...]

    @property
    def matched(self) -> list[tuple[int, int, float]]:
        return [(p, g, v) for p, g, v in self.pairs if g is not None]

    def is_tp(self, pred_index: int) -> bool:
        return self.pairs[pred_index][1] is not None


def confidence_order(preds: ImagePreds) -> list[int]:
    return sorted(range(len(preds)), key=lambda i: -preds[i].confidence)


def match(
    preds: ImagePreds, gts: ImageGts, iou_thresh: float = 0.5, class_aware: bool = True
) -> MatchResult:
    taken = [False] * len(gts)
    result: list[tuple[int, int | None, float]] = [(i, None, 0.0) for i in range(len(preds))]
    for pi in confidence_order(preds):
        p = preds[pi]
        best, best_iou = None, -1.0
        for gi, g in enumerate(gts):
            if taken[gi] or (class_aware and g.class_id != p.class_id):
                continue
            v = iou(p.box, g.box)
            if v >= iou_thresh and v > best_iou:
                best, best_iou = gi, v
        if best is not None:
            taken[best] = True
            result[pi] = (pi, best, best_iou)
    unmatched = tuple(gi for gi, t in enumerate(taken) if not t)
    return MatchResult(tuple(result), unmatched)


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """``(C+1) x (C+1)`` counts; rows are ground truth, columns predictions.

    Index ``C`` is the background row/column.
    """

    counts: np.ndarray

    @classmethod
    def zeros(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((num_classes + 1, num_classes + 1), dtype=np.int64))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0] - 1

    @property
    def background(self) -> int:
        return self.num_classes

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def normalized(self) -> np.ndarray:
        """Row-normalized matrix; empty rows stay zero."""
        rows = self.counts.sum(axis=1, keepdims=True)
        return np.divide(self.counts, rows, out=np.zeros(self.counts.shape), where=rows > 0)

    def to_json(self) -> list[list[int]]:
        return self.counts.tolist()


def confusion(
    preds: ImagePreds,
    gts: ImageGts,
    num_classes: int,
    iou_thresh: float = 0.5,
    conf_thresh: float = DEFAULT_CONF_THRESH,
) -> ConfusionMatrix:
    """Confusion matrix for one image, using class-agnostic greedy matching."""
    kept = [p for p in preds if p.confidence >= conf_thresh]
    cm = ConfusionMatrix.zeros(num_classes)
    bg = num_classes
    m = match(kept, gts, iou_thresh, class_aware=False)
    for pi, gi, _ in m.pairs:
        if gi is None:
            cm.counts[bg, kept[pi].class_id] += 1
        else:
            cm.counts[gts[gi].class_id, kept[pi].class_id] += 1
    for gi in m.unmatched_gts:
        cm.counts[gts[gi].class_id, bg] += 1
    return cm


def confusion_over(
    all_preds: Sequence[ImagePreds],
    all_gts: Sequence[ImageGts],
    num_classes: int,
    iou_thresh: float = 0.5,
    conf_thresh: float = DEFAULT_CONF_THRESH,
) -> ConfusionMatrix:
    total = ConfusionMatrix.zeros(num_classes)
    for preds, gts in zip(all_preds, all_gts, strict=True):
        total = total + confusion(preds, gts, num_classes, iou_thresh, conf_thresh)
    return total


def class_accuracy(cm: ConfusionMatrix, class_id: int) -> float | None:
    row = cm.counts[class_id]
    total = int(row.sum())
    if total == 0:
        return None
    return int(row[class_id]) / total


def _scored(
    all_preds: Sequence[ImagePreds], all_gts: Sequence[ImageGts], iou_thresh: float, class_id: int
) -> tuple[list[tuple[float, bool]], int]:
    """``(confidence, is_tp)`` for every prediction of ``class_id``, best first, plus the GT count."""
    rows = []
    n_gt = 0
    for img, (preds, gts) in enumerate(zip(all_preds, all_gts, strict=True)):
        n_gt += sum(1 for g in gts if g.class_id == class_id)
        m = match(preds, gts, iou_thresh, class_aware=True)
        for pi, p in enumerate(preds):
            if p.class_id == class_id:
                rows.append((-p.confidence, img, pi, m.is_tp(pi)))
    rows.sort(key=lambda r: r[:3])
    return [(-r[0], r[3]) for r in rows], n_gt


def average_precision(
    all_preds: Sequence[ImagePreds], all_gts: Sequence[ImageGts], iou_thresh: float, class_id: int
) -> float | None:
    """101-point interpolated AP for one class, or None when it has no ground truth."""
    scored, n_gt = _scored(all_preds, all_gts, iou_thresh, class_id)
    if n_gt == 0:
        return None
    if not scored:
        return 0.0
    recall = [0.0]
    precision = [1.0]
    tp = 0
    for k, (_, is_tp) in enumerate(scored, start=1):
        tp += is_tp
        recall.append(tp / n_gt)
        precision.append(tp / k)
    # right-to-left running max gives the envelope at each curve point
    envelope = precision[:]
    for k in range(len(envelope) - 2, -1, -1):
        envelope[k] = max(envelope[k], envelope[k + 1])
    samples = []
    k = 0
    for r in RECALL_GRID:
        while k < len(recall) and recall[k] < r:
            k += 1
        samples.append(envelope[k] if k < len(recall) else 0.0)
    return math.fsum(samples) / len(RECALL_GRID)


def present_classes(all_gts: Sequence[ImageGts]) -> list[int]:
    return sorted({g.class_id for gts in all_gts for g in gts})


def mean_average_precision(
    all_preds: Sequence[ImagePreds], all_gts: Sequence[ImageGts], iou_thresh: float = 0.5
) -> float:
    aps = [average_precision(all_preds, all_gts, iou_thresh, c) for c in present_classes(all_gts)]
    aps = [a for a in aps if a is not None]
    return math.fsum(aps) / len(aps) if aps else 0.0


def map_range(
    all_preds: Sequence[ImagePreds],
    all_gts: Sequence[ImageGts],
    thresholds: Sequence[float] = COCO_THRESHOLDS,
) -> float:
    if not thresholds:
        raise ValueError("threshold list must not be empty")
    per = [mean_average_precision(all_preds, all_gts, t) for t in thresholds]
    return math.fsum(per) / len(per)


def f1_score(precision: float, recall: float) -> float:
    s = precision + recall
    return 2 * precision * recall / s if s > 0 else 0.0


@dataclass(frozen=True)
class F1Curve:
    thresholds: tuple[float, ...]
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    f1: tuple[float, ...]
    best_threshold: float
    best_f1: float
    best_precision: float
    best_recall: float


def pr_f1_curve(
    all_preds: Sequence[ImagePreds],
    all_gts: Sequence[ImageGts],
    iou_thresh: float,
    class_id: int,
    conf_grid: Sequence[float] = DEFAULT_CONF_GRID,
) -> F1Curve:
    """Precision, recall and F1 for each confidence threshold in ``conf_grid``.

    Greedy matching visits predictions by confidence, so the matches among
    predictions above a threshold are the same as in the full matching;
    one matching pass therefore serves every threshold.
    """
    scored, n_gt = _scored(all_preds, all_gts, iou_thresh, class_id)
    ps, rs, fs = [], [], []
    for t in conf_grid:
        kept = [is_tp for conf, is_tp in scored if conf >= t]
        tp = sum(kept)
        p = tp / len(kept) if kept else 0.0
        r = tp / n_gt if n_gt else 0.0
        ps.append(p)
        rs.append(r)
        fs.append(f1_score(p, r))
    if fs:
        best = int(np.argmax(fs))
        bt, bf, bp, br = conf_grid[best], fs[best], ps[best], rs[best]
    else:
        bt = bf = bp = br = 0.0
    return F1Curve(tuple(conf_grid), tuple(ps), tuple(rs), tuple(fs), bt, bf, bp, br)


@dataclass(frozen=True)
class ClassMetrics:
    class_id: int
    name: str
    accuracy: float | None
    precision: float
    recall: float
    f1: float
    best_conf: float
    ap50: float | None
    ap50_95: float | None


@dataclass(frozen=True)
class EvalReport:
    classes: tuple[ClassMetrics, ...]
    map50: float
    map50_95: float
    confusion: ConfusionMatrix
    curves: dict[int, F1Curve] = field(default_factory=dict)
    iou_thresh: float = 0.5
    conf_thresh: float = DEFAULT_CONF_THRESH
    thresholds: tuple[float, ...] = COCO_THRESHOLDS

    def to_json(self) -> dict:
        return {
            "iou_thresh": self.iou_thresh,
            "conf_thresh": self.conf_thresh,
            "map_thresholds": list(self.thresholds),
            "map50": self.map50,
            "map50_95": self.map50_95,
            "classes": [
                {
                    "class_id": c.class_id,
                    "name": c.name,
                    "accuracy": c.accuracy,
                    "precision": c.precision,
                    "recall": c.recall,
                    "f1": c.f1,
                    "best_conf": c.best_conf,
                    "ap50": c.ap50,
                    "ap50_95": c.ap50_95,
                }
                for c in self.classes
            ],
            "confusion_matrix": self.confusion.to_json(),
        }

    def curve_rows(self) -> list[tuple[int, float, float, float, float]]:
        """Flattened ``(class_id, conf, precision, recall, f1)`` rows for CSV export."""
        rows = []
        for cid, curve in sorted(self.curves.items()):
            for t, p, r, f in zip(curve.thresholds, curve.precision, curve.recall, curve.f1):
                rows.append((cid, t, p, r, f))
        return rows


def evaluate(
    all_preds: Sequence[ImagePreds],
    all_gts: Sequence[ImageGts],
    class_names: Sequence[str],
    iou_thresh: float = 0.5,
    conf_thresh: float = DEFAULT_CONF_THRESH,
    thresholds: Sequence[float] = COCO_THRESHOLDS,
    conf_grid: Sequence[float] = DEFAULT_CONF_GRID,
) -> EvalReport:
    num_classes = len(class_names)
    cm = confusion_over(all_preds, all_gts, num_classes, iou_thresh, conf_thresh)
    metrics = []
    curves = {}
    ap_main: list[float] = []
    ap_range: list[float] = []
    for c, name in enumerate(class_names):
        curve = pr_f1_curve(all_preds, all_gts, iou_thresh, c, conf_grid)
        curves[c] = curve
        ap = average_precision(all_preds, all_gts, 0.5, c)
        per_t = [average_precision(all_preds, all_gts, t, c) for t in thresholds]
        ap_r = None if ap is None else math.fsum(per_t) / len(per_t)
        if ap is not None:
            ap_main.append(ap)
            ap_range.append(ap_r)
        metrics.append(
            ClassMetrics(
                c, name, class_accuracy(cm, c), curve.best_precision, curve.best_recall,
                curve.best_f1, curve.best_threshold, ap, ap_r,
            )
        )
    map50 = math.fsum(ap_main) / len(ap_main) if ap_main else 0.0
    map50_95 = math.fsum(ap_range) / len(ap_range) if ap_range else 0.0
    return EvalReport(tuple(metrics), map50, map50_95, cm, curves, iou_thresh, conf_thresh, tuple(thresholds))
