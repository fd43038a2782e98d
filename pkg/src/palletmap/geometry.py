"""Axis-aligned box primitives.

Boxes live in continuous pixel coordinates with the origin at the top-left,
x to the right and y downward. Area is plain ``width * height`` (no +1 pixel
convention). Degenerate boxes are rejected when constructed, so downstream
code never sees a zero-area box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"point coordinates must be finite, got ({self.x}, {self.y})")


@dataclass(frozen=True)
class BoundingBox:
    """Corner-form box ``(x1, y1, x2, y2)`` with ``x1 < x2`` and ``y1 < y2``."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"box coordinates must be finite, got {coords}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"box must have positive width and height, got {coords}")

    @classmethod
    def from_cxcywh(cls, cx: float, cy: float, w: float, h: float) -> "BoundingBox":
        return cls(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def translate(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)

    def scale(self, s: float) -> "BoundingBox":
        return BoundingBox(self.x1 * s, self.y1 * s, self.x2 * s, self.y2 * s)


def centroid(b: BoundingBox) -> Point:
    return Point((b.x1 + b.x2) / 2, (b.y1 + b.y2) / 2)


def contains(outer: BoundingBox, p: Point) -> bool:
    """Inclusive point-in-box test; points on the border count as inside."""
    return outer.x1 <= p.x <= outer.x2 and outer.y1 <= p.y <= outer.y2


def intersection_area(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union, in [0, 1]; 0 for disjoint or edge-touching boxes."""
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    union = a.area + b.area - inter
    v = inter / union
    if v >= 1.0:
        # rounding can reach 1 for boxes that differ by less than an ulp of their area
        return 1.0 if a == b else math.nextafter(1.0, 0.0)
    return v


def diagonal_sq(b: BoundingBox) -> float:
    return b.width**2 + b.height**2


def enclosing_box(a: BoundingBox, b: BoundingBox) -> BoundingBox:
    return BoundingBox(min(a.x1, b.x1), min(a.y1, b.y1), max(a.x2, b.x2), max(a.y2, b.y2))


def enclosing_diagonal_sq(a: BoundingBox, b: BoundingBox) -> float:
    """Squared diagonal of the smallest axis-aligned box covering both inputs."""
    cw = max(a.x2, b.x2) - min(a.x1, b.x1)
    ch = max(a.y2, b.y2) - min(a.y1, b.y1)
    return cw * cw + ch * ch


def center_distance_sq(a: BoundingBox, b: BoundingBox) -> float:
    ca, cb = centroid(a), centroid(b)
    return (ca.x - cb.x) ** 2 + (ca.y - cb.y) ** 2
