"""Annotation-aware image augmentation.

Bounds: zoom factor up to 1.19 (a "19% zoom"), Gaussian blur sigma up to
1.1 px, and impulse noise on up to 0.49% of the pixels. Every random choice
draws from a SplitMix64 stream seeded by ``(spec.seed, image id)``, so the
output for an image does not depend on processing order.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from palletmap.annotation_io import NormalizedAnnotation
from palletmap.errors import ConfigError
from palletmap.raster import check_raster
from palletmap.rng import SplitMix64, derive_seed

ZOOM_MAX = 1.19
BLUR_SIGMA_MAX = 1.1
NOISE_FRACTION_MAX = 0.0049
MIN_VISIBLE_RATIO = 0.10


@dataclass(frozen=True)
class AugmentationSpec:
    hflip: bool = True
    vflip: bool = True
    zoom_max: float = ZOOM_MAX
    blur_sigma_max: float = BLUR_SIGMA_MAX
    noise_fraction_max: float = NOISE_FRACTION_MAX
    seed: int = 0
    allow_override: bool = False

    def __post_init__(self) -> None:
        if self.zoom_max < 1.0:
            raise ConfigError(f"zoom_max must be >= 1, got {self.zoom_max}")
        if self.blur_sigma_max < 0 or self.noise_fraction_max < 0:
            raise ConfigError("blur and noise maxima must be non-negative")
        if self.noise_fraction_max > 1:
            raise ConfigError("noise_fraction_max cannot exceed 1")
        if not self.allow_override:
            if self.zoom_max > ZOOM_MAX:
                raise ConfigError(f"zoom_max {self.zoom_max} exceeds {ZOOM_MAX}; set allow_override to permit")
            if self.blur_sigma_max > BLUR_SIGMA_MAX:
                raise ConfigError(f"blur_sigma_max {self.blur_sigma_max} exceeds {BLUR_SIGMA_MAX}")
            if self.noise_fraction_max > NOISE_FRACTION_MAX:
                raise ConfigError(f"noise_fraction_max {self.noise_fraction_max} exceeds {NOISE_FRACTION_MAX}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "AugmentationSpec":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown augmentation field(s): {sorted(unknown)}")
        return cls(**doc)


def load_spec(path: Path | str) -> AugmentationSpec:
    return AugmentationSpec.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


Annotations = Sequence[NormalizedAnnotation]


def flip(img: np.ndarray, anns: Annotations, axis: str) -> tuple[np.ndarray, list[NormalizedAnnotation]]:
    """Mirror pixels and boxes; applying the same flip twice is the identity, bit for bit."""
    check_raster(img)
    if axis == "horizontal":
        out = img[:, ::-1].copy()
        new = [NormalizedAnnotation(a.class_id, 1.0 - a.cx, a.cy, a.w, a.h) for a in anns]
    elif axis == "vertical":
        out = img[::-1].copy()
        new = [NormalizedAnnotation(a.class_id, a.cx, 1.0 - a.cy, a.w, a.h) for a in anns]
    else:
        raise ConfigError(f"flip axis must be 'horizontal' or 'vertical', got {axis!r}")
    return out, new


def crop_window(width: int, height: int, zoom: float, anchor: tuple[float, float]) -> tuple[float, float, float, float]:
    """Pixel window ``(x0, y0, w, h)`` of a ``1/zoom`` crop placed by ``anchor`` in the unit square."""
    ax, ay = anchor
    if not (0.0 <= ax <= 1.0 and 0.0 <= ay <= 1.0):
        raise ConfigError(f"anchor must lie in the unit square, got {anchor}")
    cw, ch = width / zoom, height / zoom
    return ax * (width - cw), ay * (height - ch), cw, ch


def _bilinear_resample(img: np.ndarray, x0: float, y0: float, zoom: float) -> np.ndarray:
    h, w, _ = img.shape
    # pixel-center mapping: output pixel j samples source x0 + (j + 0.5)/zoom - 0.5
    xs = np.clip(x0 + (np.arange(w) + 0.5) / zoom - 0.5, 0.0, w - 1)
    ys = np.clip(y0 + (np.arange(h) + 0.5) / zoom - 0.5, 0.0, h - 1)
    xl = np.floor(xs).astype(np.intp)
    yl = np.floor(ys).astype(np.intp)
    xr = np.minimum(xl + 1, w - 1)
    yr = np.minimum(yl + 1, h - 1)
    fx = (xs - xl)[None, :, None]
    fy = (ys - yl)[:, None, None]
    src = img.astype(np.float64)
    top = src[yl][:, xl] * (1 - fx) + src[yl][:, xr] * fx
    bottom = src[yr][:, xl] * (1 - fx) + src[yr][:, xr] * fx
    out = top * (1 - fy) + bottom * fy
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def crop_zoom(
    img: np.ndarray,
    anns: Annotations,
    zoom: float,
    anchor: tuple[float, float] = (0.5, 0.5),
    min_visible: float = MIN_VISIBLE_RATIO,
) -> tuple[np.ndarray, list[NormalizedAnnotation]]:
    """Crop a ``1/zoom`` window and scale it back to full size.

    Boxes are clipped to the window; a box keeping less than ``min_visible``
    of its original area is dropped.
    """
    check_raster(img)
    if zoom < 1.0:
        raise ConfigError(f"zoom must be >= 1, got {zoom}")
    h, w, _ = img.shape
    x0, y0, _, _ = crop_window(w, h, zoom, anchor)
    if zoom == 1.0:
        return img.copy(), list(anns)
    out = _bilinear_resample(img, x0, y0, zoom)

    nx0, ny0 = x0 / w, y0 / h
    kept = []
    for a in anns:
        bx1 = (a.cx - a.w / 2 - nx0) * zoom
        bx2 = (a.cx + a.w / 2 - nx0) * zoom
        by1 = (a.cy - a.h / 2 - ny0) * zoom
        by2 = (a.cy + a.h / 2 - ny0) * zoom
        cx1, cx2 = min(max(bx1, 0.0), 1.0), min(max(bx2, 0.0), 1.0)
        cy1, cy2 = min(max(by1, 0.0), 1.0), min(max(by2, 0.0), 1.0)
        if cx2 <= cx1 or cy2 <= cy1:
            continue
        visible = (cx2 - cx1) * (cy2 - cy1) / ((bx2 - bx1) * (by2 - by1))
        if visible < min_visible:
            continue
        kept.append(NormalizedAnnotation(a.class_id, (cx1 + cx2) / 2, (cy1 + cy2) / 2, cx2 - cx1, cy2 - cy1))
    return out, kept


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2 * sigma * sigma))
    return k / k.sum()


def _convolve_axis(a: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    r = kernel.size // 2
    pad = [(0, 0)] * a.ndim
    pad[axis] = (r, r)
    padded = np.pad(a, pad, mode="edge")
    n = a.shape[axis]
    out = np.zeros_like(a)
    for k, wk in enumerate(kernel):
        out += wk * np.take(padded, np.arange(k, k + n), axis=axis)
    return out


def blur_float(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur in float64, edge-clamped, before rounding."""
    if sigma <= 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    kernel = gaussian_kernel(sigma)
    out = _convolve_axis(img.astype(np.float64), kernel, axis=1)
    return _convolve_axis(out, kernel, axis=0)


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    check_raster(img)
    return np.clip(np.rint(blur_float(img, sigma)), 0, 255).astype(np.uint8)


def noise_count(width: int, height: int, fraction: float) -> int:
    # the epsilon keeps products like 0.0049 * 10**6 from flooring one short
    return math.floor(fraction * width * height + 1e-9)


def noise_positions(n_pixels: int, count: int, rng: SplitMix64) -> list[int]:
    """``count`` distinct flat pixel indices via a sparse partial Fisher-Yates shuffle."""
    swapped: dict[int, int] = {}
    picks = []
    for i in range(count):
        j = i + rng.below(n_pixels - i)
        vi = swapped.get(i, i)
        vj = swapped.get(j, j)
        swapped[j] = vi
        picks.append(vj)
    return picks


def inject_noise(img: np.ndarray, fraction: float, seed: int | SplitMix64) -> np.ndarray:
    """Salt-and-pepper noise: ``floor(fraction*W*H)`` distinct pixels forced to 0 or 255."""
    check_raster(img)
    if not (0.0 <= fraction <= 1.0):
        raise ConfigError(f"noise fraction must lie in [0, 1], got {fraction}")
    rng = seed if isinstance(seed, SplitMix64) else SplitMix64(seed)
    h, w, c = img.shape
    out = img.copy()
    flat = out.reshape(h * w, c)
    for pos in noise_positions(h * w, noise_count(w, h, fraction), rng):
        flat[pos, :] = 255 if rng.coin() else 0
    return out


@dataclass(frozen=True)
class AppliedOps:
    hflip: bool
    vflip: bool
    zoom: float
    anchor: tuple[float, float]
    sigma: float
    noise_fraction: float


def augment(
    img: np.ndarray, anns: Annotations, spec: AugmentationSpec, image_id: str = ""
) -> tuple[np.ndarray, list[NormalizedAnnotation], AppliedOps]:
    """Random flips, crop/zoom, blur and noise, in that order."""
    rng = SplitMix64(derive_seed(spec.seed, image_id))
    do_h = spec.hflip and rng.coin()
    do_v = spec.vflip and rng.coin()
    zoom = rng.uniform(1.0, spec.zoom_max)
    anchor = (rng.random(), rng.random())
    sigma = spec.blur_sigma_max * (1.0 - rng.random())  # (0, max]
    fraction = rng.uniform(0.0, spec.noise_fraction_max)

    out, new = img, list(anns)
    if do_h:
        out, new = flip(out, new, "horizontal")
    if do_v:
        out, new = flip(out, new, "vertical")
    out, new = crop_zoom(out, new, zoom, anchor)
    if sigma > 0:
        out = gaussian_blur(out, sigma)
    out = inject_noise(out, fraction, rng)
    return out, new, AppliedOps(do_h, do_v, zoom, anchor, sigma, fraction)
