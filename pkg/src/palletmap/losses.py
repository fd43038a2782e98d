"""Detection losses and their analytic gradients.

All losses work on a single box or sample. ``mean_loss`` is the batch
reduction (plain arithmetic mean). Probabilities are clamped to
``[EPS, 1 - EPS]`` before any logarithm so no term is ever infinite.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from palletmap.errors import ValidationError
from palletmap.geometry import BoundingBox, center_distance_sq, enclosing_diagonal_sq, iou

EPS = 1e-7
DEFAULT_REG_MAX = 16
_V_SCALE = 4.0 / math.pi**2
OBJECTIVES = ("v8", "v11")


@dataclass(frozen=True)
class CIoUTerms:
    loss: float
    iou: float
    rho_sq: float
    c_sq: float
    v: float
    alpha: float


def aspect_penalty(pred: BoundingBox, gt: BoundingBox) -> float:
    """Aspect-ratio consistency term ``v = 4/pi^2 (atan(w_gt/h_gt) - atan(w/h))^2``."""
    d = math.atan(gt.width / gt.height) - math.atan(pred.width / pred.height)
    return _V_SCALE * d * d


def ciou_alpha(iou_value: float, v: float) -> float:
    denom = (1.0 - iou_value) + v
    # v == 0 and IoU == 1 only when the boxes coincide; the product alpha*v is 0 there anyway
    return v / denom if denom > 0 else 0.0


def ciou_loss(pred: BoundingBox, gt: BoundingBox, alpha: float | None = None) -> CIoUTerms:
    """Complete-IoU loss ``1 - IoU + rho^2/c^2 + alpha*v``.

    ``alpha`` may be pinned to a fixed value; by default it is computed from
    the current IoU and ``v``. Pinning it gives the surrogate that
    :func:`ciou_grad` differentiates.
    """
    i = iou(pred, gt)
    rho_sq = center_distance_sq(pred, gt)
    c_sq = enclosing_diagonal_sq(pred, gt)
    v = aspect_penalty(pred, gt)
    a = ciou_alpha(i, v) if alpha is None else alpha
    loss = 1.0 - i + rho_sq / c_sq + a * v
    return CIoUTerms(loss, i, rho_sq, c_sq, v, a)


def _dmin(a: float, b: float) -> tuple[float, float]:
    """Partials of min(a, b); ties split evenly, matching central differences."""
    if a < b:
        return 1.0, 0.0
    if b < a:
        return 0.0, 1.0
    return 0.5, 0.5


def _dmax(a: float, b: float) -> tuple[float, float]:
    if a > b:
        return 1.0, 0.0
    if b > a:
        return 0.0, 1.0
    return 0.5, 0.5


def _drelu(x: float) -> float:
    if x > 0:
        return 1.0
    if x < 0:
        return 0.0
    return 0.5


def ciou_grad(pred: BoundingBox, gt: BoundingBox) -> np.ndarray:
    """Gradient of the CIoU loss w.r.t. ``pred``'s ``(x1, y1, x2, y2)``.

    ``alpha`` is held constant (no gradient flows through it). At kinks of
    the min/max/clip operations the mean of the two one-sided derivatives is
    returned.
    """
    px1, py1, px2, py2 = pred.as_tuple()
    gx1, gy1, gx2, gy2 = gt.as_tuple()
    w, h = px2 - px1, py2 - py1

    # intersection
    ix2_d, _ = _dmin(px2, gx2)
    ix1_d, _ = _dmax(px1, gx1)
    iy2_d, _ = _dmin(py2, gy2)
    iy1_d, _ = _dmax(py1, gy1)
    iw_raw = min(px2, gx2) - max(px1, gx1)
    ih_raw = min(py2, gy2) - max(py1, gy1)
    iw, ih = max(iw_raw, 0.0), max(ih_raw, 0.0)
    riw, rih = _drelu(iw_raw), _drelu(ih_raw)
    d_iw = np.array([-ix1_d, 0.0, ix2_d, 0.0]) * riw
    d_ih = np.array([0.0, -iy1_d, 0.0, iy2_d]) * rih
    inter = iw * ih
    d_inter = d_iw * ih + d_ih * iw

    area_p = w * h
    d_area_p = np.array([-h, -w, h, w])
    union = area_p + (gx2 - gx1) * (gy2 - gy1) - inter
    d_union = d_area_p - d_inter
    d_iou = (d_inter * union - inter * d_union) / (union * union)

    # center distance over enclosing diagonal
    dx = (px1 + px2 - gx1 - gx2) / 2
    dy = (py1 + py2 - gy1 - gy2) / 2
    rho_sq = dx * dx + dy * dy
    d_rho = np.array([dx, dy, dx, dy])  # d(rho^2) = 2*d * (1/2)

    cx2_d, _ = _dmax(px2, gx2)
    cx1_d, _ = _dmin(px1, gx1)
    cy2_d, _ = _dmax(py2, gy2)
    cy1_d, _ = _dmin(py1, gy1)
    cw = max(px2, gx2) - min(px1, gx1)
    ch = max(py2, gy2) - min(py1, gy1)
    c_sq = cw * cw + ch * ch
    d_c = np.array([-2 * cw * cx1_d, -2 * ch * cy1_d, 2 * cw * cx2_d, 2 * ch * cy2_d])
    d_dist = (d_rho * c_sq - rho_sq * d_c) / (c_sq * c_sq)

    # aspect term with alpha frozen
    i = inter / union
    t = math.atan((gx2 - gx1) / (gy2 - gy1)) - math.atan(w / h)
    v = _V_SCALE * t * t
    alpha = ciou_alpha(i, v)
    # d/dw atan(w/h) = h/(w^2+h^2); d/dh = -w/(w^2+h^2)
    s = w * w + h * h
    d_atan = np.array([-h / s, w / s, h / s, -w / s])
    d_v = -2 * _V_SCALE * t * d_atan

    return -d_iou + d_dist + alpha * d_v


def bce_loss(y: int, p: float) -> float:
    """Binary cross entropy for a label ``y`` in {0, 1}."""
    p = min(max(p, EPS), 1.0 - EPS)
    return -(y * math.log(p) + (1 - y) * math.log(1.0 - p))


def bce_grad(y: int, p: float) -> float:
    """d(bce)/dp; zero inside the clamped region."""
    if p < EPS or p > 1.0 - EPS:
        return 0.0
    return -y / p + (1 - y) / (1.0 - p)


def _check_simplex(p: np.ndarray, tol: float, what: str) -> None:
    if p.ndim != 1 or p.size == 0:
        raise ValidationError(f"{what} must be a non-empty vector")
    if np.any(p < -tol) or abs(float(p.sum()) - 1.0) > tol:
        raise ValidationError(f"{what} must lie on the probability simplex (sum={float(p.sum())!r})")


def _check_one_hot(y: np.ndarray, size: int) -> None:
    if y.shape != (size,) or not np.all((y == 0) | (y == 1)) or y.sum() != 1:
        raise ValidationError(f"target must be a one-hot vector of length {size}")


def ce_loss(y: Sequence[float], p: Sequence[float]) -> float:
    """Categorical cross entropy ``-sum_c y_c log(max(p_c, EPS))``."""
    y_arr = np.asarray(y, dtype=np.float64)
    p_arr = np.asarray(p, dtype=np.float64)
    _check_simplex(p_arr, 1e-6, "class probabilities")
    _check_one_hot(y_arr, p_arr.size)
    return float(-np.sum(y_arr * np.log(np.maximum(p_arr, EPS))))


def ce_grad(y: Sequence[float], p: Sequence[float]) -> np.ndarray:
    y_arr = np.asarray(y, dtype=np.float64)
    p_arr = np.asarray(p, dtype=np.float64)
    _check_simplex(p_arr, 1e-6, "class probabilities")
    _check_one_hot(y_arr, p_arr.size)
    return np.where(p_arr > EPS, -y_arr / np.maximum(p_arr, EPS), 0.0)


@dataclass(frozen=True, eq=False)
class DflBins:
    """Discrete distribution over the integer bins ``0..reg_max``."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=np.float64)
        _check_simplex(p, 1e-9, "DFL bin probabilities")
        if p.size < 2:
            raise ValidationError("DFL needs at least two bins")
        object.__setattr__(self, "probs", p)

    @property
    def reg_max(self) -> int:
        return self.probs.size - 1


def _dfl_bins(target: float, reg_max: int) -> tuple[int, int, float, float]:
    if not (0.0 <= target <= reg_max):
        raise ValidationError(f"DFL target {target} outside [0, {reg_max}]")
    left = min(int(math.floor(target)), reg_max - 1)
    right = left + 1
    return left, right, right - target, target - left


def dfl_loss(target: float, bins: DflBins) -> float:
    """Distribution focal loss: cross entropy against the two bins around ``target``."""
    left, right, wl, wr = _dfl_bins(target, bins.reg_max)
    pl = max(bins.probs[left], EPS)
    pr = max(bins.probs[right], EPS)
    return -(wl * math.log(pl) + wr * math.log(pr))


def dfl_grad(target: float, bins: DflBins) -> tuple[np.ndarray, float]:
    """Returns ``(d/dprobs, d/dtarget)``.

    The target derivative is taken inside the current bin pair; at integer
    targets it is the mean of the two neighbouring slopes.
    """
    left, right, wl, wr = _dfl_bins(target, bins.reg_max)
    p = bins.probs
    g = np.zeros_like(p)
    if p[left] > EPS:
        g[left] -= wl / p[left]
    if p[right] > EPS:
        g[right] -= wr / p[right]

    def slope(l: int) -> float:
        return math.log(max(p[l], EPS)) - math.log(max(p[l + 1], EPS))

    if target == math.floor(target) and 0 < target < bins.reg_max:
        k = int(target)
        d_t = 0.5 * (slope(k - 1) + slope(k))
    else:
        d_t = slope(left)
    return g, d_t


@dataclass(frozen=True)
class LossWeights:
    """Loss-term weights.

    ``lambda_iou`` is carried along as configuration only; the box term of
    both objectives is weighted by ``lambda_box``.
    """

    lambda_box: float = 1.0
    lambda_obj: float = 1.0
    lambda_cls: float = 1.0
    lambda_dfl: float = 1.0
    lambda_iou: float = 1.0

    def __post_init__(self) -> None:
        for name, v in asdict(self).items():
            if not (math.isfinite(v) and v >= 0):
                raise ValidationError(f"{name} must be finite and non-negative, got {v}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "LossWeights":
        known = {k: float(doc[k]) for k in cls.__dataclass_fields__ if k in doc}
        unknown = set(doc) - set(known)
        if unknown:
            raise ValidationError(f"unknown loss weight(s): {sorted(unknown)}")
        return cls(**known)


@dataclass(frozen=True)
class TuningConfig:
    """Loss weights plus pass-through training settings such as ``lr0``."""

    weights: LossWeights
    extras: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"weights": self.weights.to_json(), **self.extras}

    @classmethod
    def from_json(cls, doc: dict) -> "TuningConfig":
        doc = dict(doc)
        weights = LossWeights.from_json(doc.pop("weights", {}))
        return cls(weights, doc)


def load_tuning_config(path: Path | str) -> TuningConfig:
    return TuningConfig.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def tuned_weights_config() -> TuningConfig:
    """Tuned loss weights and learning rate shipped as package data."""
    return load_tuning_config(Path(__file__).parent / "data" / "tuned_weights.json")


@dataclass(frozen=True)
class LossBreakdown:
    ciou: float
    obj: float
    cls: float
    dfl: float
    total: float
    objective: str
    grad: dict | None = None


def total_loss(
    ciou: float,
    obj: float,
    cls: float,
    weights: LossWeights,
    objective: str = "v8",
    dfl: float | None = None,
    grad: dict | None = None,
) -> LossBreakdown:
    """Weighted sum of loss terms.

    ``v8`` combines box, objectness and classification; ``v11`` adds the DFL
    term. Passing a non-zero DFL value to ``v8`` is an error rather than a
    silent drop.
    """
    if objective not in OBJECTIVES:
        raise ValidationError(f"unknown objective {objective!r}; expected one of {OBJECTIVES}")
    if objective == "v8" and dfl:
        raise ValidationError("v8 objective has no DFL term; got a non-zero dfl value")
    dfl_value = dfl or 0.0
    total = weights.lambda_box * ciou + weights.lambda_obj * obj + weights.lambda_cls * cls
    if objective == "v11":
        total += weights.lambda_dfl * dfl_value
    return LossBreakdown(ciou, obj, cls, dfl_value, total, objective, grad)


def mean_loss(fn: Callable[..., float], samples: Iterable[tuple]) -> float:
    """Arithmetic mean of ``fn(*sample)`` over ``samples``; 0 for an empty batch."""
    values = [float(fn(*s)) for s in samples]
    return math.fsum(values) / len(values) if values else 0.0
