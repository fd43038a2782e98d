import math
import time

import numpy as np
import pytest
from hypothesis import given, strategies as st

from palletmap.geometry import (
    BoundingBox,
    Point,
    center_distance_sq,
    centroid,
    contains,
    diagonal_sq,
    enclosing_diagonal_sq,
    iou,
)

from oracles import iou_rational, iou_raster

coord = st.floats(-500, 500, allow_nan=False)
extent = st.floats(0.5, 300, allow_nan=False)


@st.composite
def boxes(draw):
    x, y = draw(coord), draw(coord)
    return BoundingBox(x, y, x + draw(extent), y + draw(extent))


def test_centroid_examples():
    assert centroid(BoundingBox(0, 0, 2, 2)) == Point(1, 1)
    assert centroid(BoundingBox(10, 30, 30, 50)) == Point(20, 40)
    assert centroid(BoundingBox(0, 0, 640, 480)) == Point(320, 240)


def test_contains_is_inclusive():
    outer = BoundingBox(0, 0, 100, 60)
    assert contains(outer, Point(20, 40))
    assert contains(outer, Point(100, 60))
    assert contains(outer, Point(0, 0))
    assert not contains(outer, Point(101, 40))


def test_iou_examples():
    assert iou(BoundingBox(0, 0, 10, 10), BoundingBox(0, 0, 10, 10)) == 1.0
    assert iou(BoundingBox(0, 0, 1, 1), BoundingBox(5, 5, 6, 6)) == 0.0
    assert iou(BoundingBox(0, 0, 2, 2), BoundingBox(1, 0, 3, 2)) == pytest.approx(1 / 3, abs=1e-15)
    # touching edges share no area
    assert iou(BoundingBox(0, 0, 1, 1), BoundingBox(1, 0, 2, 1)) == 0.0


def test_enclosing_and_center_distance_examples():
    a = BoundingBox(0, 0, 3, 4)
    assert enclosing_diagonal_sq(a, a) == 25
    assert enclosing_diagonal_sq(BoundingBox(0, 0, 1, 1), BoundingBox(2, 2, 3, 3)) == 18
    inner, outer = BoundingBox(2, 2, 4, 5), BoundingBox(0, 0, 10, 8)
    assert enclosing_diagonal_sq(inner, outer) == diagonal_sq(outer)
    assert center_distance_sq(a, a) == 0
    assert center_distance_sq(BoundingBox(-1, -1, 1, 1), BoundingBox(2, 3, 4, 5)) == 25


@pytest.mark.parametrize(
    "corners",
    [(0, 0, 0, 1), (0, 0, 1, 0), (2, 0, 1, 1), (0, 0, math.nan, 1), (0, 0, math.inf, 1)],
)
def test_degenerate_boxes_rejected(corners):
    with pytest.raises(ValueError):
        BoundingBox(*corners)


def test_from_cxcywh():
    assert BoundingBox.from_cxcywh(50, 50, 20, 40) == BoundingBox(40, 30, 60, 70)


@given(boxes(), boxes())
def test_iou_symmetric_and_bounded(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0


@given(boxes(), boxes())
def test_iou_one_only_for_identical(a, b):
    assert iou(a, a) == 1.0
    if a != b:
        assert iou(a, b) < 1.0


@given(boxes(), boxes())
def test_enclosing_diagonal_dominates(a, b):
    e = enclosing_diagonal_sq(a, b)
    assert e >= diagonal_sq(a) * (1 - 1e-12)
    assert e >= diagonal_sq(b) * (1 - 1e-12)


@given(boxes(), boxes(), st.floats(-1000, 1000), st.floats(-1000, 1000))
def test_centroid_containment_translation_equivariant(outer, inner, dx, dy):
    # integer-ish shifts keep the comparison exact; arbitrary floats could round across the edge
    dx, dy = round(dx), round(dy)
    before = contains(outer, centroid(inner))
    after = contains(outer.translate(dx, dy), centroid(inner.translate(dx, dy)))
    assert before == after


def random_pairs(n, seed=0):
    # extents of at least 4 px keep the 0.25-px grid quantization under the raster tolerance
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        x1, y1 = rng.uniform(0, 40, 2)
        w1, h1 = rng.uniform(4, 40, 2)
        x2, y2 = rng.uniform(0, 40, 2)
        w2, h2 = rng.uniform(4, 40, 2)
        out.append(((x1, y1, x1 + w1, y1 + h1), (x2, y2, x2 + w2, y2 + h2)))
    return out


def test_iou_matches_rational_and_raster_oracles():
    pairs = random_pairs(1000)
    start = time.perf_counter()
    worst_exact = worst_raster = 0.0
    for a, b in pairs:
        v = iou(BoundingBox(*a), BoundingBox(*b))
        worst_exact = max(worst_exact, abs(v - float(iou_rational(a, b))))
        worst_raster = max(worst_raster, abs(v - iou_raster(a, b)))
    assert worst_exact <= 1e-12
    assert worst_raster <= 2e-2
    assert time.perf_counter() - start < 5.0
