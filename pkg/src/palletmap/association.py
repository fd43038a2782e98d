"""Pallet-hole to pallet association.

Two independent strategies are offered:

* ``centroid``: a hole belongs to a pallet whose box contains the hole's
  center (borders inclusive). When several pallets qualify the winner is the
  one with the largest IoU with the hole, then the smallest center distance,
  then the lowest pallet index.
* ``iou``: a hole belongs to the pallet with the largest IoU, provided that
  IoU reaches the threshold ``tau``. Exact ties go to the lowest index.

Because a hole normally sits inside its pallet, its IoU equals
``area(hole) / area(pallet)``; with four holes across a pallet face that
lands around 0.05 to 0.10, hence the default ``tau = 0.05``. Calibrate it on
your own data if hole sizes differ.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from palletmap.annotation_io import PALLET, PALLET_HOLE, Detection
from palletmap.errors import ConfigError
from palletmap.geometry import BoundingBox, center_distance_sq, centroid, contains, iou

METHODS = ("centroid", "iou")
DEFAULT_TAU = 0.05


@dataclass(frozen=True)
class Link:
    hole: int
    pallet: int | None
    score: float

    @property
    def assigned(self) -> bool:
        return self.pallet is not None


@dataclass(frozen=True)
class AssociationMap:
    method: str
    links: tuple[Link, ...]
    tau: float | None = None

    def pallet_of(self, hole: int) -> int | None:
        return self.links[hole].pallet

    def assignments(self) -> list[int | None]:
        return [link.pallet for link in self.links]

    @property
    def unassigned(self) -> list[int]:
        return [link.hole for link in self.links if link.pallet is None]

    def to_json(self, image_id: str | None = None) -> dict:
        return {
            "image_id": image_id,
            "method": self.method,
            "tau": self.tau,
            "links": [{"hole": l.hole, "pallet": l.pallet, "score": l.score} for l in self.links],
        }


@dataclass(frozen=True)
class AssociationConfig:
    method: str = "centroid"
    tau: float = DEFAULT_TAU
    tie_break: str = "iou-distance-index"

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown association method {self.method!r}; expected one of {METHODS}")
        if not (0.0 <= self.tau <= 1.0):
            raise ConfigError(f"tau must lie in [0, 1], got {self.tau}")
        if self.tie_break != "iou-distance-index":
            raise ConfigError(f"unknown tie-break policy {self.tie_break!r}")


def _box(d: Detection | BoundingBox) -> BoundingBox:
    return d if isinstance(d, BoundingBox) else d.box


def associate_centroid(
    holes: Sequence[Detection | BoundingBox], pallets: Sequence[Detection | BoundingBox]
) -> AssociationMap:
    pallet_boxes = [_box(p) for p in pallets]
    links = []
    for i, hole in enumerate(holes):
        hb = _box(hole)
        c = centroid(hb)
        best = None
        best_key = None
        for j, pb in enumerate(pallet_boxes):
            if not contains(pb, c):
                continue
            # larger IoU first, then nearer center; strict comparison keeps the lower index
            key = (-iou(hb, pb), center_distance_sq(hb, pb))
            if best_key is None or key < best_key:
                best, best_key = j, key
        links.append(Link(i, best, 1.0 if best is not None else 0.0))
    return AssociationMap("centroid", tuple(links))


def associate_iou(
    holes: Sequence[Detection | BoundingBox],
    pallets: Sequence[Detection | BoundingBox],
    tau: float = DEFAULT_TAU,
) -> AssociationMap:
    if not (0.0 <= tau <= 1.0):
        raise ConfigError(f"tau must lie in [0, 1], got {tau}")
    pallet_boxes = [_box(p) for p in pallets]
    links = []
    for i, hole in enumerate(holes):
        hb = _box(hole)
        best, best_iou = None, -1.0
        for j, pb in enumerate(pallet_boxes):
            v = iou(hb, pb)
            if v > best_iou:
                best, best_iou = j, v
        if best is not None and best_iou >= tau:
            links.append(Link(i, best, best_iou))
        else:
            links.append(Link(i, None, max(best_iou, 0.0)))
    return AssociationMap("iou", tuple(links), tau)


def associate(
    holes: Sequence[Detection | BoundingBox],
    pallets: Sequence[Detection | BoundingBox],
    cfg: AssociationConfig = AssociationConfig(),
) -> AssociationMap:
    if cfg.method == "centroid":
        return associate_centroid(holes, pallets)
    if cfg.method == "iou":
        return associate_iou(holes, pallets, cfg.tau)
    raise ConfigError(f"unknown association method {cfg.method!r}")


def split_by_class(
    detections: Sequence[Detection], hole_class: int = PALLET_HOLE, pallet_class: int = PALLET
) -> tuple[list[Detection], list[Detection]]:
    """Partition detections into ``(holes, pallets)``; other classes are dropped."""
    holes = [d for d in detections if d.class_id == hole_class]
    pallets = [d for d in detections if d.class_id == pallet_class]
    return holes, pallets


def associate_detections(
    detections: Sequence[Detection], cfg: AssociationConfig = AssociationConfig()
) -> tuple[AssociationMap, list[Detection], list[Detection]]:
    """Class-filter a mixed detection list, then associate holes with pallets."""
    holes, pallets = split_by_class(detections)
    return associate(holes, pallets, cfg), holes, pallets
