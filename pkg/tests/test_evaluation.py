import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from palletmap.annotation_io import PALLET, PALLET_HOLE, Detection, GroundTruth
from palletmap.evaluation import (
    COCO_THRESHOLDS,
    ConfusionMatrix,
    average_precision,
    class_accuracy,
    confusion,
    evaluate,
    f1_score,
    map_range,
    match,
    mean_average_precision,
    pr_f1_curve,
)
from palletmap.geometry import BoundingBox, iou

from oracles import ap_oracle

B = BoundingBox(10, 10, 50, 50)


def gt(box=B, c=PALLET):
    return GroundTruth(c, box)


def det(conf, box=B, c=PALLET):
    return Detection(c, box, conf)


def shifted(b, frac):
    return b.translate(frac * b.width, 0)


def test_match_examples():
    m = match([det(0.9)], [gt()])
    assert m.matched == [(0, 0, 1.0)]
    # shift giving IoU 0.7 for both predictions
    off = shifted(B, 0.3 / 1.7)
    assert iou(off, B) == pytest.approx(0.7)
    m = match([det(0.8, off), det(0.9, off)], [gt()])
    assert m.is_tp(1) and not m.is_tp(0)
    assert match([det(0.9, c=PALLET_HOLE)], [gt()]).matched == []
    assert match([det(0.9, c=PALLET_HOLE)], [gt()], class_aware=False).matched == [(0, 0, 1.0)]


def test_duplicates_count_once():
    m = match([det(0.9), det(0.8), det(0.7)], [gt()])
    assert [m.is_tp(i) for i in range(3)] == [True, False, False]


def test_confusion_examples():
    other = BoundingBox(100, 100, 140, 130)
    cm = confusion([det(0.9), det(0.8, other, PALLET_HOLE)], [gt(), gt(other, PALLET_HOLE)], 2)
    assert cm.counts.tolist() == [[1, 0, 0], [0, 1, 0], [0, 0, 0]]
    cm = confusion([det(0.9, c=PALLET_HOLE)], [gt()], 2)
    assert cm.counts[PALLET, PALLET_HOLE] == 1
    cm = confusion([det(0.9, c=PALLET_HOLE)], [], 2)
    assert cm.counts[2, PALLET_HOLE] == 1
    # below the confidence cut the prediction is ignored and the GT is missed
    cm = confusion([det(0.1)], [gt()], 2, conf_thresh=0.25)
    assert cm.counts[PALLET, 2] == 1


def test_class_accuracy():
    diag = ConfusionMatrix(np.diag([5, 3, 0]))
    assert class_accuracy(diag, 0) == 1.0 and class_accuracy(diag, 1) == 1.0
    cm = ConfusionMatrix(np.array([[19, 0, 1], [0, 0, 4], [0, 0, 0]]))
    assert class_accuracy(cm, 0) == 0.95
    assert class_accuracy(cm, 1) == 0.0
    assert class_accuracy(cm, 2) is None
    assert cm.normalized()[0].tolist() == [0.95, 0.0, 0.05]


def test_ap_examples():
    assert average_precision([[det(0.9)]], [[gt()]], 0.5, PALLET) == 1.0
    far = BoundingBox(300, 300, 320, 320)
    assert average_precision([[det(0.9), det(0.8, far)]], [[gt()]], 0.5, PALLET) == 1.0
    ap = average_precision([[det(0.9, far), det(0.8)]], [[gt()]], 0.5, PALLET)
    assert ap == pytest.approx(0.5 + 0.5 / 101, abs=1e-12)
    assert average_precision([[]], [[gt()]], 0.5, PALLET) == 0.0
    assert average_precision([[det(0.9)]], [[]], 0.5, PALLET) is None


def test_map_excludes_classes_without_gt():
    far = BoundingBox(300, 300, 320, 320)
    preds = [[det(0.9), det(0.5, far, PALLET_HOLE)]]
    assert mean_average_precision(preds, [[gt()]]) == 1.0
    assert map_range([[]], [[gt()]]) == 0.0
    with pytest.raises(ValueError):
        map_range(preds, [[gt()]], [])


def test_map_range_between_extremes():
    gts = [[gt(BoundingBox(0, 0, 100, 100)), gt(BoundingBox(200, 0, 300, 100))]]
    # 10% horizontal offset: IoU = 90/110 ~ 0.818, so matches hold up to 0.80 and fail from 0.85
    preds = [[det(0.9, BoundingBox(10, 0, 110, 100)), det(0.8, BoundingBox(210, 0, 310, 100))]]
    per = [mean_average_precision(preds, gts, t) for t in COCO_THRESHOLDS]
    # all-FP thresholds keep only the r = 0 sample of the curve's (0, 1) starting point
    assert per[:7] == [1.0] * 7 and per[7:] == [1 / 101] * 3
    m = map_range(preds, gts)
    assert min(per) < m < max(per)
    assert m == pytest.approx(math.fsum(per) / len(per))


def test_f1_examples():
    assert f1_score(0.814, 0.812) == pytest.approx(0.8130, abs=5e-4)
    assert f1_score(0.0, 0.0) == 0.0
    curve = pr_f1_curve([[det(0.9)]], [[gt()]], 0.5, PALLET, conf_grid=(1.0,))
    assert (curve.precision[0], curve.recall[0], curve.f1[0]) == (0.0, 0.0, 0.0)
    curve = pr_f1_curve([[det(0.9), det(0.6, BoundingBox(100, 100, 150, 150))]],
                        [[gt(), gt(BoundingBox(100, 100, 150, 150))]], 0.5, PALLET)
    below = [f for t, f in zip(curve.thresholds, curve.f1) if t <= 0.6]
    assert below and all(f == 1.0 for f in below)


def random_fixture(rng, max_preds=10, n_images=None):
    n_images = n_images or int(rng.integers(1, 4))
    all_preds, all_gts = [], []
    budget = max_preds
    for _ in range(n_images):
        gts = []
        for _ in range(rng.integers(0, 5)):
            x, y = rng.uniform(0, 200, 2)
            w, h = rng.uniform(10, 60, 2)
            gts.append(GroundTruth(int(rng.integers(0, 2)), BoundingBox(x, y, x + w, y + h)))
        preds = []
        for _ in range(rng.integers(0, budget + 1) if budget else 0):
            if gts and rng.random() < 0.7:
                g = gts[rng.integers(len(gts))]
                jx = rng.uniform(-0.3, 0.3, 2) * g.box.width
                jy = rng.uniform(-0.3, 0.3, 2) * g.box.height
                box = BoundingBox(g.box.x1 + jx[0], g.box.y1 + jy[0], g.box.x2 + jx[1], g.box.y2 + jy[1])
                c = g.class_id if rng.random() < 0.85 else 1 - g.class_id
            else:
                x, y = rng.uniform(0, 200, 2)
                box, c = BoundingBox(x, y, x + 20, y + 20), int(rng.integers(0, 2))
            preds.append(Detection(c, box, float(rng.choice([0.3, 0.5, 0.7, rng.uniform()]))))
        budget -= len(preds)
        all_preds.append(preds)
        all_gts.append(gts)
    return all_preds, all_gts


def test_ap_equals_envelope_enumeration_oracle():
    rng = np.random.default_rng(2024)
    checked = 0
    for _ in range(500):
        preds, gts = random_fixture(rng)
        assert sum(map(len, preds)) <= 10
        for t in (0.3, 0.5, 0.75):
            for c in (PALLET, PALLET_HOLE):
                assert average_precision(preds, gts, t, c) == ap_oracle(preds, gts, t, c, iou)
                checked += 1
    assert checked == 3000


def test_confusion_conservation():
    rng = np.random.default_rng(99)
    for _ in range(100):
        preds, gts = random_fixture(rng, max_preds=25)
        for p_img, g_img in zip(preds, gts):
            cm = confusion(p_img, g_img, 2, 0.5, 0.25)
            kept = [p for p in p_img if p.confidence >= 0.25]
            m = match(kept, g_img, 0.5, class_aware=False)
            n_pairs = len(m.matched)
            total = n_pairs + (len(kept) - n_pairs) + len(m.unmatched_gts)
            assert cm.counts.sum() == total
            assert cm.counts[:2].sum(axis=1).tolist() == [sum(g.class_id == c for g in g_img) for c in (0, 1)]
            assert cm.counts[:, :2].sum(axis=0).tolist() == [sum(p.class_id == c for p in kept) for c in (0, 1)]
            assert (cm.counts >= 0).all()


def test_curve_counts_are_consistent():
    rng = np.random.default_rng(7)
    for _ in range(50):
        preds, gts = random_fixture(rng, max_preds=20)
        for c in (0, 1):
            n_gt = sum(g.class_id == c for img in gts for g in img)
            curve = pr_f1_curve(preds, gts, 0.5, c, conf_grid=(0.0, 0.4, 0.6))
            for t, p, r in zip(curve.thresholds, curve.precision, curve.recall):
                kept = sum(d.class_id == c and d.confidence >= t for img in preds for d in img)
                tp = round(r * n_gt) if n_gt else 0
                assert tp <= min(kept, n_gt)
                if kept:
                    assert p == pytest.approx(tp / kept)
                assert 0.0 <= p <= 1.0 and 0.0 <= r <= 1.0


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_ap_non_increasing_in_iou_threshold(seed):
    preds, gts = random_fixture(np.random.default_rng(seed), max_preds=15)
    for c in (0, 1):
        aps = [average_precision(preds, gts, t, c) for t in COCO_THRESHOLDS]
        if aps[0] is None:
            continue
        assert all(0.0 <= a <= 1.0 for a in aps)
        assert all(a >= b - 1e-12 for a, b in zip(aps, aps[1:]))


def test_evaluate_report():
    gts = [[gt(), gt(BoundingBox(100, 100, 120, 120), PALLET_HOLE)]]
    preds = [[det(0.9), det(0.8, BoundingBox(100, 100, 120, 120), PALLET_HOLE)]]
    rep = evaluate(preds, gts, ["pallet", "pallet_hole"])
    doc = rep.to_json()
    assert doc["map50"] == 1.0 and doc["map50_95"] == 1.0
    assert [c["accuracy"] for c in doc["classes"]] == [1.0, 1.0]
    assert doc["confusion_matrix"] == [[1, 0, 0], [0, 1, 0], [0, 0, 0]]
    assert len(rep.curve_rows()) == 2 * 101
