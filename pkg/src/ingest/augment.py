"""
Train-time augmentation: horizontal flip, vertical flip, scale, shear (in
that order), then clamp to [0, 1]. Random values are always drawn in the same
order, whatever is enabled, so a per-sample generator fixes the outcome.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from src.core.config import AugmentationSection
from src.ingest.manifest import Sample
from src.ingest.parsers import resize_bilinear


@dataclass(frozen=True)
class AugmentationSpec:
    enabled: bool = False
    hflip_p: float = 0.5
    vflip_p: float = 0.5
    scale_min: float = 0.8
    scale_max: float = 1.2
    shear_deg: float = 10.0

    @classmethod
    def from_config(cls, section: AugmentationSection) -> "AugmentationSpec":
        return cls(section.enabled, section.hflip_p, section.vflip_p,
                   section.scale_min, section.scale_max, section.shear_deg)

    @classmethod
    def identity(cls) -> "AugmentationSpec":
        return cls(enabled=False)


def hflip(img: np.ndarray) -> np.ndarray:
    return img[:, :, ::-1].copy()


def vflip(img: np.ndarray) -> np.ndarray:
    return img[:, ::-1, :].copy()


def rescale(img: np.ndarray, factor: float) -> np.ndarray:
    """Resize by `factor`, then center-crop (zoom in) or edge-pad (zoom out) back to H×W."""
    C, H, W = img.shape
    nh, nw = max(1, int(round(H * factor))), max(1, int(round(W * factor)))
    if (nh, nw) == (H, W):
        return img.copy()
    out = resize_bilinear(img, nh, nw)
    if nh >= H:
        top = (nh - H) // 2
        out = out[:, top:top + H, :]
    else:
        top = (H - nh) // 2
        out = np.pad(out, ((0, 0), (top, H - nh - top), (0, 0)), mode="edge")
    if nw >= W:
        left = (nw - W) // 2
        out = out[:, :, left:left + W]
    else:
        left = (W - nw) // 2
        out = np.pad(out, ((0, 0), (0, 0), (left, W - nw - left)), mode="edge")
    return np.ascontiguousarray(out)


def shear(img: np.ndarray, angle_deg: float) -> np.ndarray:
    """Horizontal shear about the image centre; bilinear along x, border replicated."""
    C, H, W = img.shape
    t = math.tan(math.radians(angle_deg))
    cy = (H - 1) / 2.0
    ys = np.arange(H, dtype=np.float64)[:, None]
    xs = np.arange(W, dtype=np.float64)[None, :]
    src = np.clip(xs + t * (ys - cy), 0.0, W - 1)  # H×W
    x0 = np.floor(src).astype(np.int64)
    x1 = np.minimum(x0 + 1, W - 1)
    wx = (src - x0).astype(img.dtype)
    rows = np.arange(H)[:, None]
    return img[:, rows, x0] * (1 - wx) + img[:, rows, x1] * wx


def augment_image(img: np.ndarray, spec: AugmentationSpec, rng: np.random.Generator) -> np.ndarray:
    if not spec.enabled:
        return img
    do_h = rng.random() < spec.hflip_p
    do_v = rng.random() < spec.vflip_p
    factor = rng.uniform(spec.scale_min, spec.scale_max)
    angle = rng.uniform(-spec.shear_deg, spec.shear_deg)

    out = img
    if do_h:
        out = hflip(out)
    if do_v:
        out = vflip(out)
    if factor != 1.0:
        out = rescale(out, factor)
    if angle != 0.0:
        out = shear(out, angle)
    if out is img:
        return img
    return np.clip(out, 0.0, 1.0).astype(img.dtype, copy=False)


def augment(s: Sample, spec: AugmentationSpec, rng: np.random.Generator) -> Sample:
    """Augment the image; the label and source are never touched."""
    return replace(s, image=augment_image(s.image, spec, rng))
