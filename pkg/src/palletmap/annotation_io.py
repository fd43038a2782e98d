"""YOLO-style label/prediction files, grid tensors and dataset manifests.

Label lines are ``class cx cy w h`` with center/size normalized to the image;
prediction lines append a confidence: ``class cx cy w h conf``.

Grid tensors hold ``S x S x (B * (5 + C))`` values. Each slot is laid out as
``(x, y, w, h, objectness, p_0 .. p_{C-1})``. The box fields are taken as
already-normalized image coordinates: no per-cell offset or stride decoding
is applied, because the detector's activation scheme is not part of this
library. On disk a grid is a header line ``S B C`` followed by the values in
row-major ``(row, col, slot, field)`` order.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from palletmap.errors import ConfigError, ParseError, StructuralError, ValidationError
from palletmap.geometry import BoundingBox

PALLET = 0
PALLET_HOLE = 1
DEFAULT_CLASS_NAMES = ("pallet", "pallet-hole")
DEFAULT_NUM_CLASSES = len(DEFAULT_CLASS_NAMES)

SPLITS = ("train", "val", "test")
# 75/10/15 as stated for the dataset; the training section also quotes 75/15/10.
DEFAULT_SPLIT = (0.75, 0.10, 0.15)
ALT_SPLIT = (0.75, 0.15, 0.10)

# Normalized coordinates are stored as multiples of 2**-53. On that grid 1 - x is
# exact, so reflecting an annotation twice gives back the identical value.
_GRID = float(2**53)

_LABEL_FIELDS = ("class", "cx", "cy", "w", "h")
_PRED_FIELDS = _LABEL_FIELDS + ("conf",)


@dataclass(frozen=True)
class NormalizedAnnotation:
    class_id: int
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if self.class_id < 0:
            raise ValidationError(f"class id must be non-negative, got {self.class_id}")
        for name in ("cx", "cy", "w", "h"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValidationError(f"{name}={v} outside [0, 1]")
            object.__setattr__(self, name, round(v * _GRID) / _GRID)
        if self.w <= 0 or self.h <= 0:
            raise ValidationError(f"annotation must have positive extent, got w={self.w} h={self.h}")

    def to_box(self, img_w: float, img_h: float) -> BoundingBox:
        return BoundingBox(
            (self.cx - self.w / 2) * img_w,
            (self.cy - self.h / 2) * img_h,
            (self.cx + self.w / 2) * img_w,
            (self.cy + self.h / 2) * img_h,
        )

    @classmethod
    def from_box(cls, class_id: int, box: BoundingBox, img_w: float, img_h: float) -> "NormalizedAnnotation":
        """Normalize a pixel box, clipping its corners to the image first."""
        x1 = min(max(box.x1 / img_w, 0.0), 1.0)
        x2 = min(max(box.x2 / img_w, 0.0), 1.0)
        y1 = min(max(box.y1 / img_h, 0.0), 1.0)
        y2 = min(max(box.y2 / img_h, 0.0), 1.0)
        return cls(class_id, (x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)


@dataclass(frozen=True)
class GroundTruth:
    class_id: int
    box: BoundingBox


@dataclass(frozen=True)
class Detection:
    class_id: int
    box: BoundingBox
    confidence: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.confidence <= 1.0):
            raise ValidationError(f"confidence {self.confidence} outside [0, 1]")


def _fmt(v: float) -> str:
    # repr is the shortest string that parses back to the same double
    return repr(float(v))


def _split_fields(line: str, names: Sequence[str], lineno: int) -> list[str]:
    parts = line.split()
    if len(parts) < len(names):
        missing = names[len(parts)]
        raise ParseError(
            f"expected {len(names)} fields ({' '.join(names)}), got {len(parts)}; missing '{missing}'",
            line=lineno,
            field=missing,
        )
    if len(parts) > len(names):
        raise ParseError(f"expected {len(names)} fields, got {len(parts)}", line=lineno)
    return parts


def _parse_record(
    parts: Sequence[str], names: Sequence[str], lineno: int, num_classes: int
) -> tuple[int, list[float]]:
    try:
        class_id = int(parts[0])
    except ValueError:
        raise ParseError(f"class id {parts[0]!r} is not an integer", line=lineno, field="class") from None
    values = []
    for name, raw in zip(names[1:], parts[1:]):
        try:
            v = float(raw)
        except ValueError:
            raise ParseError(f"{name} value {raw!r} is not a number", line=lineno, field=name) from None
        if not math.isfinite(v):
            raise ParseError(f"{name} value {raw!r} is not finite", line=lineno, field=name)
        values.append(v)
    if not (0 <= class_id < num_classes):
        raise ValidationError(f"class id {class_id} out of range [0, {num_classes})", line=lineno)
    return class_id, values


def _to_annotation(class_id: int, vals: Sequence[float], lineno: int) -> NormalizedAnnotation:
    try:
        return NormalizedAnnotation(class_id, *vals[:4])
    except ValidationError as exc:
        raise ValidationError(str(exc), line=lineno) from None


def parse_annotations(text: str, num_classes: int = DEFAULT_NUM_CLASSES) -> list[NormalizedAnnotation]:
    """Parse label text into normalized annotations, keeping file order."""
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = _split_fields(line, _LABEL_FIELDS, lineno)
        class_id, vals = _parse_record(parts, _LABEL_FIELDS, lineno, num_classes)
        out.append(_to_annotation(class_id, vals, lineno))
    return out


def parse_labels(
    text: str, img_w: float, img_h: float, num_classes: int = DEFAULT_NUM_CLASSES
) -> list[GroundTruth]:
    """Parse a label file into pixel-space ground truths.

    Raises ParseError (with line number) for malformed lines and
    ValidationError for out-of-range class ids or coordinates.
    """
    return [
        GroundTruth(a.class_id, a.to_box(img_w, img_h))
        for a in parse_annotations(text, num_classes)
    ]


def parse_predictions(
    text: str, img_w: float, img_h: float, num_classes: int = DEFAULT_NUM_CLASSES
) -> list[Detection]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = _split_fields(line, _PRED_FIELDS, lineno)
        class_id, vals = _parse_record(parts, _PRED_FIELDS, lineno, num_classes)
        conf = vals[4]
        if not (0.0 <= conf <= 1.0):
            raise ValidationError(f"confidence {conf} outside [0, 1]", line=lineno)
        ann = _to_annotation(class_id, vals, lineno)
        out.append(Detection(class_id, ann.to_box(img_w, img_h), conf))
    return out


def serialize_annotations(anns: Iterable[NormalizedAnnotation]) -> str:
    return "".join(
        f"{a.class_id} {_fmt(a.cx)} {_fmt(a.cy)} {_fmt(a.w)} {_fmt(a.h)}\n" for a in anns
    )


def serialize_labels(gts: Iterable[GroundTruth], img_w: float, img_h: float) -> str:
    return serialize_annotations(
        NormalizedAnnotation.from_box(g.class_id, g.box, img_w, img_h) for g in gts
    )


def serialize_predictions(dets: Iterable[Detection], img_w: float, img_h: float) -> str:
    lines = []
    for d in dets:
        a = NormalizedAnnotation.from_box(d.class_id, d.box, img_w, img_h)
        lines.append(
            f"{a.class_id} {_fmt(a.cx)} {_fmt(a.cy)} {_fmt(a.w)} {_fmt(a.h)} {_fmt(d.confidence)}\n"
        )
    return "".join(lines)


@dataclass(frozen=True, eq=False)
class GridPrediction:
    """Raw detector output block of shape ``(S, S, B, 5 + C)``."""

    S: int
    B: int
    C: int
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.S <= 0 or self.B <= 0 or self.C <= 0:
            raise StructuralError(f"grid dims must be positive, got S={self.S} B={self.B} C={self.C}")
        values = np.asarray(self.values, dtype=np.float64)
        expected = self.S * self.S * self.B * (5 + self.C)
        if values.size != expected:
            raise StructuralError(
                f"grid block has {values.size} values, expected S*S*B*(5+C) = {expected}"
            )
        values = values.reshape(self.S, self.S, self.B, 5 + self.C)
        probs = values[..., 4:]
        if np.any(probs < 0.0) or np.any(probs > 1.0):
            raise StructuralError("objectness and class probabilities must lie in [0, 1]")
        object.__setattr__(self, "values", values)


def decode_grid(g: GridPrediction, img_w: float, img_h: float, conf_thresh: float) -> list[Detection]:
    """Turn a grid block into detections.

    Confidence is ``objectness * max(class probs)``; the argmax class (lowest
    index on ties) is emitted when confidence >= ``conf_thresh``. Slots whose
    box has no positive extent are skipped.
    """
    out = []
    for row in range(g.S):
        for col in range(g.S):
            for slot in range(g.B):
                x, y, w, h, obj = g.values[row, col, slot, :5]
                cls_probs = g.values[row, col, slot, 5:]
                class_id = int(np.argmax(cls_probs))
                conf = float(obj * cls_probs[class_id])
                if conf < conf_thresh or w <= 0 or h <= 0:
                    continue
                box = BoundingBox(
                    float(x - w / 2) * img_w,
                    float(y - h / 2) * img_h,
                    float(x + w / 2) * img_w,
                    float(y + h / 2) * img_h,
                )
                out.append(Detection(class_id, box, min(conf, 1.0)))
    return out


def parse_grid(text: str) -> GridPrediction:
    tokens = text.split()
    if len(tokens) < 3:
        raise StructuralError("grid file needs a header 'S B C'")
    try:
        S, B, C = (int(t) for t in tokens[:3])
        values = np.array([float(t) for t in tokens[3:]], dtype=np.float64)
    except ValueError as exc:
        raise StructuralError(f"grid file is not numeric: {exc}") from None
    return GridPrediction(S, B, C, values)


def serialize_grid(g: GridPrediction) -> str:
    flat = g.values.reshape(-1)
    return f"{g.S} {g.B} {g.C}\n" + " ".join(_fmt(v) for v in flat) + "\n"


@dataclass(frozen=True)
class ImageEntry:
    id: str
    width: int
    height: int
    labels: str
    split: str | None = None


@dataclass
class DatasetManifest:
    classes: list[str]
    images: list[ImageEntry]
    fractions: tuple[float, float, float] | None = None
    root: Path = field(default=Path("."), compare=False)

    def split(self, name: str) -> list[ImageEntry]:
        return [e for e in self.images if e.split == name]

    def label_path(self, entry: ImageEntry) -> Path:
        return self.root / entry.labels

    def to_json(self) -> dict:
        doc: dict = {
            "classes": list(self.classes),
            "images": [
                {"id": e.id, "width": e.width, "height": e.height, "labels": e.labels, "split": e.split}
                for e in self.images
            ],
        }
        if self.fractions is not None:
            doc["fractions"] = list(self.fractions)
        return doc

    @classmethod
    def from_json(cls, doc: dict, root: Path | str = ".") -> "DatasetManifest":
        try:
            images = [
                ImageEntry(
                    str(im["id"]), int(im["width"]), int(im["height"]), str(im["labels"]), im.get("split")
                )
                for im in doc["images"]
            ]
            classes = [str(c) for c in doc["classes"]]
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed manifest: {exc}") from None
        fractions = doc.get("fractions")
        return cls(classes, images, tuple(fractions) if fractions is not None else None, Path(root))


def load_manifest(path: Path | str) -> DatasetManifest:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    return DatasetManifest.from_json(doc, root=path.parent)


def save_manifest(manifest: DatasetManifest, path: Path | str) -> None:
    Path(path).write_text(json.dumps(manifest.to_json(), indent=2) + "\n", encoding="utf-8")


def check_fractions(fractions: Sequence[float]) -> tuple[float, float, float]:
    if len(fractions) != 3:
        raise ConfigError(f"need three split fractions (train, val, test), got {len(fractions)}")
    if any(f < 0 for f in fractions):
        raise ConfigError(f"split fractions must be non-negative, got {tuple(fractions)}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {sum(fractions)!r}")
    return (float(fractions[0]), float(fractions[1]), float(fractions[2]))


def split_boundaries(n: int, fractions: Sequence[float]) -> tuple[int, int]:
    """Cut points for ``n`` items; each cumulative boundary is rounded half-up."""
    f = check_fractions(fractions)
    b1 = math.floor(f[0] * n + 0.5)
    b2 = math.floor((f[0] + f[1]) * n + 0.5)
    return min(b1, n), min(max(b2, b1), n)


def split_manifest(
    entries: Sequence[ImageEntry],
    fractions: Sequence[float] = DEFAULT_SPLIT,
    seed: int = 0,
    classes: Sequence[str] = DEFAULT_CLASS_NAMES,
) -> DatasetManifest:
    """Shuffle ``entries`` with ``seed`` and partition them into train/val/test."""
    f = check_fractions(fractions)
    order = list(range(len(entries)))
    random.Random(seed).shuffle(order)
    b1, b2 = split_boundaries(len(entries), f)
    tags = {}
    for rank, idx in enumerate(order):
        tags[idx] = "train" if rank < b1 else "val" if rank < b2 else "test"
    images = [replace(e, split=tags[i]) for i, e in enumerate(entries)]
    return DatasetManifest(list(classes), images, f)
