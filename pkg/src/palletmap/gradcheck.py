"""Central finite-difference verification of the analytic loss gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from palletmap.geometry import BoundingBox
from palletmap.losses import (
    DEFAULT_REG_MAX,
    DflBins,
    bce_grad,
    bce_loss,
    ce_grad,
    ce_loss,
    ciou_grad,
    ciou_loss,
    dfl_grad,
    dfl_loss,
)

STEP = 1e-5
REL_TOL = 1e-4
# gap kept between any two coordinates that feed a min/max so the FD stencil never crosses a kink
_KINK_MARGIN = 1e-2


@dataclass(frozen=True)
class GradReport:
    loss: str
    samples: int
    max_rel_err: float
    tol: float = REL_TOL

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def to_json(self) -> dict:
        return {"loss": self.loss, "samples": self.samples, "max_rel_err": self.max_rel_err, "pass": self.passed}


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``max|a - n| / max(max|a|, max|n|)``, with a 1e-8 floor on the denominator."""
    analytic = np.atleast_1d(np.asarray(analytic, dtype=np.float64))
    numeric = np.atleast_1d(np.asarray(numeric, dtype=np.float64))
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def _nondegenerate(pred: np.ndarray, gt: np.ndarray) -> bool:
    for axis in (0, 1):
        coords = [pred[axis], pred[axis + 2], gt[axis], gt[axis + 2]]
        gaps = np.abs(np.subtract.outer(coords, coords))[np.triu_indices(4, 1)]
        if np.min(gaps) < _KINK_MARGIN:
            return False
    return True


def random_box_pair(rng: np.random.Generator, extent: float = 100.0) -> tuple[BoundingBox, BoundingBox]:
    """Draw a pair of boxes with no coincident coordinates (kink-free)."""
    while True:
        raw = rng.uniform(0.0, extent, size=(2, 4))
        boxes = []
        for r in raw:
            x1, x2 = sorted(r[[0, 2]])
            y1, y2 = sorted(r[[1, 3]])
            boxes.append(np.array([x1, y1, x2, y2]))
        if _nondegenerate(*boxes):
            return BoundingBox(*boxes[0]), BoundingBox(*boxes[1])


def ciou_fd(pred: BoundingBox, gt: BoundingBox, h: float = STEP) -> np.ndarray:
    """Central differences of the CIoU surrogate with alpha pinned at ``pred``."""
    alpha = ciou_loss(pred, gt).alpha
    base = np.array(pred.as_tuple())
    out = np.zeros(4)
    for k in range(4):
        e = np.zeros(4)
        e[k] = h
        up = ciou_loss(BoundingBox(*(base + e)), gt, alpha=alpha).loss
        down = ciou_loss(BoundingBox(*(base - e)), gt, alpha=alpha).loss
        out[k] = (up - down) / (2 * h)
    return out


def check_ciou(n: int, rng: np.random.Generator) -> GradReport:
    worst = 0.0
    for _ in range(n):
        pred, gt = random_box_pair(rng)
        worst = max(worst, rel_err(ciou_grad(pred, gt), ciou_fd(pred, gt)))
    return GradReport("ciou", n, worst)


def check_bce(n: int, rng: np.random.Generator, h: float = STEP) -> GradReport:
    worst = 0.0
    for _ in range(n):
        y = int(rng.integers(0, 2))
        p = float(rng.uniform(0.01, 0.99))
        fd = (bce_loss(y, p + h) - bce_loss(y, p - h)) / (2 * h)
        worst = max(worst, rel_err(bce_grad(y, p), fd))
    return GradReport("bce", n, worst)


def _simplex_directions(size: int) -> list[np.ndarray]:
    dirs = []
    for i in range(size):
        for j in range(i + 1, size):
            d = np.zeros(size)
            d[i], d[j] = 1.0, -1.0
            dirs.append(d)
    return dirs


def _random_simplex(rng: np.random.Generator, size: int, floor: float) -> np.ndarray:
    p = rng.dirichlet(np.ones(size))
    p = floor + (1.0 - floor * size) * p
    return p / p.sum()


def check_ce(n: int, rng: np.random.Generator, h: float = STEP) -> GradReport:
    """Directional derivatives along ``e_i - e_j`` so probes stay on the simplex."""
    worst = 0.0
    for _ in range(n):
        size = int(rng.integers(2, 6))
        p = _random_simplex(rng, size, 0.01)
        y = np.zeros(size)
        y[rng.integers(0, size)] = 1.0
        g = ce_grad(y, p)
        dirs = _simplex_directions(size)
        analytic = np.array([g @ d for d in dirs])
        numeric = np.array([(ce_loss(y, p + h * d) - ce_loss(y, p - h * d)) / (2 * h) for d in dirs])
        worst = max(worst, rel_err(analytic, numeric))
    return GradReport("ce", n, worst)


def check_dfl(n: int, rng: np.random.Generator, h: float = STEP, reg_max: int = DEFAULT_REG_MAX) -> GradReport:
    worst = 0.0
    size = reg_max + 1
    for _ in range(n):
        p = _random_simplex(rng, size, 0.005)
        while True:
            target = float(rng.uniform(0.0, reg_max))
            frac = target - np.floor(target)
            if _KINK_MARGIN < frac < 1 - _KINK_MARGIN:
                break
        bins = DflBins(p)
        g, g_t = dfl_grad(target, bins)
        left = int(np.floor(target))
        dirs = [d for d in _simplex_directions(size) if d[left] != 0 or d[left + 1] != 0]
        dirs = [dirs[k] for k in rng.choice(len(dirs), size=min(6, len(dirs)), replace=False)]
        analytic = [g @ d for d in dirs]
        numeric = [
            (dfl_loss(target, DflBins(p + h * d)) - dfl_loss(target, DflBins(p - h * d))) / (2 * h) for d in dirs
        ]
        analytic.append(g_t)
        numeric.append((dfl_loss(target + h, bins) - dfl_loss(target - h, bins)) / (2 * h))
        worst = max(worst, rel_err(np.array(analytic), np.array(numeric)))
    return GradReport("dfl", n, worst)


CHECKS = {"ciou": check_ciou, "bce": check_bce, "ce": check_ce, "dfl": check_dfl}


def run_all(samples: int = 500, seed: int = 0) -> list[GradReport]:
    reports = []
    for offset, (name, check) in enumerate(CHECKS.items()):
        reports.append(check(samples, np.random.default_rng([seed, offset])))
    return reports
