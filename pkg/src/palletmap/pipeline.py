"""Ingestion -> association -> evaluation over a manifest of images."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from palletmap.annotation_io import (
    DatasetManifest,
    Detection,
    GroundTruth,
    ImageEntry,
    decode_grid,
    load_manifest,
    parse_grid,
    parse_labels,
    parse_predictions,
)
from palletmap.association import AssociationConfig, associate_detections
from palletmap.evaluation import COCO_THRESHOLDS, DEFAULT_CONF_THRESH, EvalReport, evaluate


def find_prediction(pred_dir: Path, image_id: str) -> Path | None:
    for suffix in (".txt", ".grid"):
        p = pred_dir / f"{image_id}{suffix}"
        if p.is_file():
            return p
    return None


def load_predictions(path: Path, entry: ImageEntry, num_classes: int, grid_conf: float = 0.0) -> list[Detection]:
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".grid":
        return decode_grid(parse_grid(text), entry.width, entry.height, grid_conf)
    return parse_predictions(text, entry.width, entry.height, num_classes)


def load_ground_truth(manifest: DatasetManifest, entry: ImageEntry) -> list[GroundTruth]:
    text = manifest.label_path(entry).read_text(encoding="utf-8")
    return parse_labels(text, entry.width, entry.height, len(manifest.classes))


@dataclass
class LoadedImages:
    ids: list[str] = field(default_factory=list)
    preds: list[list[Detection]] = field(default_factory=list)
    gts: list[list[GroundTruth]] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)


def load_images(
    manifest: DatasetManifest, pred_dir: Path, split: str | None = None, grid_conf: float = 0.0
) -> LoadedImages:
    """Pair every manifest image with its predictions; images without a prediction file are skipped."""
    out = LoadedImages()
    for entry in manifest.images:
        if split is not None and entry.split != split:
            continue
        path = find_prediction(pred_dir, entry.id)
        if path is None:
            out.skipped.append(entry.id)
            continue
        out.ids.append(entry.id)
        out.preds.append(load_predictions(path, entry, len(manifest.classes), grid_conf))
        out.gts.append(load_ground_truth(manifest, entry))
    return out


@dataclass
class PipelineResult:
    associations: list[dict]
    report: EvalReport
    skipped: list[str]

    @property
    def unassigned(self) -> int:
        return sum(1 for a in self.associations for link in a["links"] if link["pallet"] is None)

    def to_json(self) -> dict:
        return {
            "images": len(self.associations),
            "skipped": self.skipped,
            "unassigned_holes": self.unassigned,
            "associations": self.associations,
            "evaluation": self.report.to_json(),
        }


def run_pipeline(
    manifest_path: Path | str,
    pred_dir: Path | str,
    assoc: AssociationConfig = AssociationConfig(),
    iou_thresh: float = 0.5,
    conf_thresh: float = DEFAULT_CONF_THRESH,
    thresholds: Sequence[float] = COCO_THRESHOLDS,
    split: str | None = None,
    grid_conf: float = 0.0,
) -> PipelineResult:
    manifest = load_manifest(manifest_path)
    data = load_images(manifest, Path(pred_dir), split, grid_conf)
    associations = []
    for image_id, preds in zip(data.ids, data.preds):
        amap, _, _ = associate_detections(preds, assoc)
        associations.append(amap.to_json(image_id))
    report = evaluate(data.preds, data.gts, manifest.classes, iou_thresh, conf_thresh, thresholds)
    return PipelineResult(associations, report, data.skipped)
