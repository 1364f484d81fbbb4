"""
Procedural stand-in for the leaf-disease photos: five texture classes with
distinct base colours, written as PPM files plus a manifest.
"""

import logging
import os
import re
from typing import Callable, Dict

import numpy as np

from src.ingest.manifest import CLASS_NAMES, DatasetManifest, ManifestEntry, write_manifest
from src.ingest.parsers import write_ppm

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.tsv"

# base RGB per class, in CLASS_NAMES order
BASE_COLOURS = np.array([
    [0.55, 0.30, 0.15],  # brown blotches
    [0.85, 0.80, 0.25],  # yellow streaks
    [0.55, 0.85, 0.45],  # pale mottle
    [0.10, 0.45, 0.15],  # healthy dark green
    [0.35, 0.60, 0.75],  # mosaic
])


def _stripes(yy, xx, rng):
    f = rng.uniform(0.25, 0.35)
    return 0.5 + 0.5 * np.sin(f * yy + rng.uniform(0, 2 * np.pi))


def _streaks(yy, xx, rng):
    f = rng.uniform(0.25, 0.35)
    return 0.5 + 0.5 * np.sin(f * xx + rng.uniform(0, 2 * np.pi))


def _mottle(yy, xx, rng):
    period = int(rng.integers(6, 9))
    return (((yy // period) + (xx // period)) % 2).astype(np.float64)


def _smooth(yy, xx, rng):
    return 0.5 + 0.1 * np.sin(0.05 * (yy + xx) + rng.uniform(0, 2 * np.pi))


def _spots(yy, xx, rng):
    out = np.zeros_like(yy, dtype=np.float64)
    n = yy.shape[0]
    for _ in range(6):
        cy, cx, r = rng.uniform(0, n), rng.uniform(0, n), rng.uniform(n / 12, n / 6)
        out = np.maximum(out, ((yy - cy) ** 2 + (xx - cx) ** 2 < r * r).astype(np.float64))
    return out


PATTERNS: Dict[int, Callable] = {0: _stripes, 1: _streaks, 2: _mottle, 3: _smooth, 4: _spots}


def synthetic_image(label: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """uint8 size×size×3 texture for one class."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    pattern = PATTERNS[label](yy, xx, rng)
    base = BASE_COLOURS[label] + rng.normal(0.0, 0.03, size=3)
    img = base[None, None, :] * (0.6 + 0.4 * pattern[:, :, None])
    img += rng.normal(0.0, 0.02, size=img.shape)
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def slug(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")


def generate_synthetic(out_dir: str, per_class: int, seed: int = 0, size: int = 64) -> str:
    """Write per_class images for each class and the manifest; returns the manifest path."""
    if per_class < 1:
        raise ValueError(f"per_class must be >= 1, got {per_class}")
    entries = []
    for label, name in enumerate(CLASS_NAMES):
        for i in range(per_class):
            rng = np.random.default_rng([seed, label, i])
            rel = f"{slug(name)}/{i:04d}.ppm"
            write_ppm(os.path.join(out_dir, rel), synthetic_image(label, size, rng))
            entries.append(ManifestEntry(rel, label))
    path = os.path.join(out_dir, MANIFEST_NAME)
    write_manifest(DatasetManifest(entries, root=out_dir), path)
    logger.info("wrote %d synthetic images to %s", len(entries), out_dir)
    return path
