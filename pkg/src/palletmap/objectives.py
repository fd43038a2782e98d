"""Built-in objectives for the ``tune`` command.

``quadratic`` is a smoke-test bowl with its optimum at 0.3 of every range.

``association`` tunes the IoU association threshold ``tau`` and the
detection confidence cut-off ``conf_thresh`` on a noisy copy of the bundled
warehouse fixture. Boxes are jittered and low-confidence false positives are
added near the top of the frame, away from the pallets. The score is the mean of
mAP@0.5:0.95 and the fraction of hole detections linked to their true
pallet (or left unlinked when they are strays). The running score is
reported after every image, so the median pruner has something to act on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from palletmap.annotation_io import PALLET, PALLET_HOLE, Detection, GroundTruth
from palletmap.association import associate_iou
from palletmap.evaluation import map_range
from palletmap.fixtures import scenes
from palletmap.geometry import BoundingBox
from palletmap.rng import SplitMix64
from palletmap.tuner import ParamRange, ParamSpace


def quadratic(params: dict[str, float], report: Callable[[int, float], None], space: ParamSpace) -> float:
    total = 0.0
    for name, pr in space.items():
        lo, hi = pr.internal_bounds
        u = (pr.to_internal(params[name]) - lo) / (hi - lo)
        total -= (u - 0.3) ** 2
    return total


@dataclass(frozen=True)
class NoisyImage:
    gts: list[GroundTruth]
    preds: list[Detection]
    # per prediction: index of the true parent pallet among the predictions, None if none
    truth: list[int | None]


def _jitter(box: BoundingBox, rng: SplitMix64, amount: float) -> BoundingBox:
    dx = [rng.uniform(-amount, amount) * s for s in (box.width, box.height, box.width, box.height)]
    x1, y1, x2, y2 = (c + d for c, d in zip(box.as_tuple(), dx))
    return BoundingBox(min(x1, x2 - 1), min(y1, y2 - 1), max(x2, x1 + 1), max(y2, y1 + 1))


def noisy_fixture(seed: int = 11) -> list[NoisyImage]:
    out = []
    for k, sc in enumerate(scenes("perturbed")):
        rng = SplitMix64(seed * 7919 + k)
        preds: list[Detection] = []
        truth: list[int | None] = []
        pred_of_gt: dict[int, int] = {}
        for gi, g in enumerate(sc.gts):
            conf = 0.55 + 0.4 * rng.random()
            pred_of_gt[gi] = len(preds)
            preds.append(Detection(g.class_id, _jitter(g.box, rng, 0.08), conf))
            truth.append(None)
        for gi, p in enumerate(sc.parent):
            if p is not None:
                truth[pred_of_gt[gi]] = pred_of_gt[p]
        for _ in range(2):
            # low-confidence spurious holes in the upper half of the frame
            x, y = rng.uniform(20, 580), rng.uniform(10, 200)
            preds.append(Detection(PALLET_HOLE, BoundingBox(x, y, x + 30, y + 25), 0.1 + 0.3 * rng.random()))
            truth.append(None)
        out.append(NoisyImage(sc.gts, preds, truth))
    return out


def _association_accuracy(img: NoisyImage, tau: float, conf_thresh: float) -> tuple[int, int]:
    """``(correct, total)`` over all hole predictions of one image.

    A true hole is correct when it survives the confidence cut and links to
    its true pallet; a stray is correct when it is dropped or left unlinked.
    """
    kept = [i for i, d in enumerate(img.preds) if d.confidence >= conf_thresh]
    holes = [i for i in kept if img.preds[i].class_id == PALLET_HOLE]
    pallets = [i for i in kept if img.preds[i].class_id == PALLET]
    amap = associate_iou([img.preds[i] for i in holes], [img.preds[i] for i in pallets], tau)
    linked = {holes[l.hole]: (pallets[l.pallet] if l.pallet is not None else None) for l in amap.links}
    all_holes = [i for i, d in enumerate(img.preds) if d.class_id == PALLET_HOLE]
    correct = 0
    for i in all_holes:
        if i in linked:
            correct += linked[i] == img.truth[i]
        else:
            correct += img.truth[i] is None
    return correct, len(all_holes)


def association_objective(params: dict[str, float], report: Callable[[int, float], None], data: list[NoisyImage]) -> float:
    tau, conf = params["tau"], params["conf_thresh"]
    correct = total = 0
    score = 0.0
    for step, _ in enumerate(data):
        seen = data[: step + 1]
        c, t = _association_accuracy(data[step], tau, conf)
        correct, total = correct + c, total + t
        preds = [[d for d in img.preds if d.confidence >= conf] for img in seen]
        m = map_range(preds, [img.gts for img in seen])
        score = 0.5 * m + 0.5 * (correct / total if total else 0.0)
        report(step, score)
    return score


ASSOCIATION_SPACE = {"tau": ParamRange(0.0, 0.3), "conf_thresh": ParamRange(0.05, 0.9)}


def get_objective(name: str, space: ParamSpace) -> Callable:
    if name == "quadratic":
        return lambda params, report: quadratic(params, report, space)
    if name == "association":
        missing = {"tau", "conf_thresh"} - set(space)
        if missing:
            raise KeyError(f"association objective needs parameters {sorted(missing)} in the space")
        data = noisy_fixture()
        return lambda params, report: association_objective(params, report, data)
    raise KeyError(f"unknown objective {name!r}; built-ins: quadratic, association")


OBJECTIVES = ("quadratic", "association")
