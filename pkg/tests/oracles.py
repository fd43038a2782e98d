"""Independent reference implementations used only by the tests."""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


def iou_rational(a, b) -> Fraction:
    a = [Fraction(v) for v in a]
    b = [Fraction(v) for v in b]
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    inter = max(iw, 0) * max(ih, 0)
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def iou_raster(a, b, step: float = 0.25) -> float:
    """Counts grid-cell centres inside each box."""
    lo_x, lo_y = min(a[0], b[0]), min(a[1], b[1])
    hi_x, hi_y = max(a[2], b[2]), max(a[3], b[3])
    xs = np.arange(lo_x + step / 2, hi_x, step)
    ys = np.arange(lo_y + step / 2, hi_y, step)
    X, Y = np.meshgrid(xs, ys)
    in_a = (X >= a[0]) & (X < a[2]) & (Y >= a[1]) & (Y < a[3])
    in_b = (X >= b[0]) & (X < b[2]) & (Y >= b[1]) & (Y < b[3])
    union = np.count_nonzero(in_a | in_b)
    return np.count_nonzero(in_a & in_b) / union if union else 0.0


def ap_envelope(flags: list[bool], n_gt: int) -> float:
    """101-point AP by direct definition: for each r, max precision over all prefixes reaching recall >= r."""
    points = [(0.0, 1.0)]
    tp = 0
    for k, f in enumerate(flags, start=1):
        tp += f
        points.append((tp / n_gt, tp / k))
    samples = []
    for i in range(101):
        r = i / 100
        reach = [p for rec, p in points if rec >= r]
        samples.append(max(reach) if reach else 0.0)
    return math.fsum(samples) / 101


def brute_associate_iou(holes, pallets, tau, iou_fn):
    out = []
    for h in holes:
        scores = [iou_fn(h, p) for p in pallets]
        if not scores:
            out.append(None)
            continue
        best = max(scores)
        j = min(j for j, s in enumerate(scores) if s == best)
        out.append(j if best >= tau else None)
    return out



def greedy_flags(preds, gts, thresh, iou_fn):
    """TP flag per prediction from a from-scratch greedy matcher (class-aware)."""
    order = sorted(range(len(preds)), key=lambda i: -preds[i].confidence)
    free = set(range(len(gts)))
    flags = [False] * len(preds)
    for i in order:
        cands = [
            (iou_fn(preds[i].box, gts[g].box), -g)
            for g in free
            if gts[g].class_id == preds[i].class_id
        ]
        cands = [c for c in cands if c[0] >= thresh]
        if cands:
            _, neg_g = max(cands)
            free.discard(-neg_g)
            flags[i] = True
    return flags


def ap_oracle(all_preds, all_gts, thresh, class_id, iou_fn):
    rows = []
    n_gt = 0
    for img, (preds, gts) in enumerate(zip(all_preds, all_gts)):
        n_gt += sum(g.class_id == class_id for g in gts)
        flags = greedy_flags(preds, gts, thresh, iou_fn)
        rows += [(-p.confidence, img, i, flags[i]) for i, p in enumerate(preds) if p.class_id == class_id]
    if n_gt == 0:
        return None
    if not rows:
        return 0.0
    rows.sort()
    return ap_envelope([r[3] for r in rows], n_gt)
