"""Deterministic synthetic warehouse scenes.

Each image shows one or two pallets along the floor, with two fork holes in
the lower half of every pallet face. Each hole covers about 6.6% of its
pallet's area, so the IoU association at the default ``tau`` links it.
The ``perturbed`` variant adds stray hole boxes near the top of some images,
outside every pallet, so association must leave them unassigned.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from palletmap.annotation_io import (
    DEFAULT_CLASS_NAMES,
    PALLET,
    PALLET_HOLE,
    Detection,
    GroundTruth,
    ImageEntry,
    save_manifest,
    serialize_labels,
    serialize_predictions,
    split_manifest,
)
from palletmap.geometry import BoundingBox
from palletmap.rng import SplitMix64

IMG_W, IMG_H = 640, 480
N_IMAGES = 8
# image index -> number of stray holes added in the perturbed variant
STRAYS = {0: 1, 3: 2}
VARIANTS = ("clean", "perturbed")


@dataclass(frozen=True)
class Scene:
    image_id: str
    gts: list[GroundTruth]
    # for each GT index: index of the parent pallet GT, None for pallets and strays
    parent: list[int | None]


def _scene(idx: int, rng: SplitMix64, strays: int) -> Scene:
    gts: list[GroundTruth] = []
    parent: list[int | None] = []
    n_pallets = 1 + rng.below(2)
    for slot in range(n_pallets):
        pw = 150 + rng.below(71)
        ph = 80 + rng.below(41)
        x1 = slot * 320 + 10 + rng.below(320 - pw - 20)
        y1 = 250 + rng.below(IMG_H - 250 - ph - 10)
        pallet = BoundingBox(x1, y1, x1 + pw, y1 + ph)
        pi = len(gts)
        gts.append(GroundTruth(PALLET, pallet))
        parent.append(None)
        hw, hh = round(pw * 0.22), round(ph * 0.3)
        hy = y1 + ph - hh - round(ph * 0.1)
        for hx in (x1 + round(pw * 0.12), x1 + pw - round(pw * 0.12) - hw):
            gts.append(GroundTruth(PALLET_HOLE, BoundingBox(hx, hy, hx + hw, hy + hh)))
            parent.append(pi)
    for k in range(strays):
        sx = 40 + 250 * k + rng.below(100)
        sy = 20 + rng.below(60)
        gts.append(GroundTruth(PALLET_HOLE, BoundingBox(sx, sy, sx + 36, sy + 28)))
        parent.append(None)
    return Scene(f"wh_{idx:03d}", gts, parent)


def scenes(variant: str = "clean", seed: int = 7) -> list[Scene]:
    if variant not in VARIANTS:
        raise ValueError(f"unknown fixture variant {variant!r}")
    out = []
    for idx in range(N_IMAGES):
        rng = SplitMix64(seed * 1000 + idx)
        strays = STRAYS.get(idx, 0) if variant == "perturbed" else 0
        out.append(_scene(idx, rng, strays))
    return out


def perfect_predictions(scene: Scene) -> list[Detection]:
    return [Detection(g.class_id, g.box, round(0.95 - 0.01 * k, 2)) for k, g in enumerate(scene.gts)]


def expected_unassigned(variant: str) -> int:
    return sum(STRAYS.values()) if variant == "perturbed" else 0


def write_fixture(out_dir: Path | str, variant: str = "clean", seed: int = 7) -> Path:
    """Write manifest, labels, predictions and ``expected.json``; returns the manifest path."""
    out = Path(out_dir)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    (out / "preds").mkdir(parents=True, exist_ok=True)
    entries = []
    holes = 0
    for sc in scenes(variant, seed):
        (out / "labels" / f"{sc.image_id}.txt").write_text(serialize_labels(sc.gts, IMG_W, IMG_H), encoding="utf-8")
        (out / "preds" / f"{sc.image_id}.txt").write_text(
            serialize_predictions(perfect_predictions(sc), IMG_W, IMG_H), encoding="utf-8"
        )
        entries.append(ImageEntry(sc.image_id, IMG_W, IMG_H, f"labels/{sc.image_id}.txt"))
        holes += sum(1 for g in sc.gts if g.class_id == PALLET_HOLE)
    manifest = split_manifest(entries, seed=seed, classes=DEFAULT_CLASS_NAMES)
    path = out / "manifest.json"
    save_manifest(manifest, path)
    expected = {"variant": variant, "images": N_IMAGES, "holes": holes, "unassigned": expected_unassigned(variant)}
    (out / "expected.json").write_text(json.dumps(expected, indent=2) + "\n", encoding="utf-8")
    return path


def bundled_fixture(variant: str = "clean") -> Path:
    """Manifest path of the fixture shipped with the package."""
    return Path(__file__).parent / "data" / "warehouse" / variant / "manifest.json"
