"""
Batch iteration over a manifest.

The epoch order is a permutation drawn from (seed, epoch). Every sample's
augmentation generator is seeded with (seed, epoch, entry index, aug_seed), so
the batch stream is the same with one worker or many: workers only decode and
augment, and `ThreadPoolExecutor.map` hands results back in submission order.
"""

import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np

from src.core.errors import ContractError
from src.ingest.augment import AugmentationSpec, augment_image
from src.ingest.manifest import DatasetManifest
from src.ingest.parsers import load_image


class ImageCache:
    """
    Decoded images keyed by (path, size), least recently used evicted first.
    Thread-safe; entries are read-only arrays. max_items=None keeps everything,
    0 disables caching.
    """

    def __init__(self, max_items: Optional[int] = None):
        if max_items is not None and max_items < 0:
            raise ContractError(f"cache size must be >= 0, got {max_items}")
        self.max_items = max_items
        self._items: "OrderedDict[Tuple[str, int], np.ndarray]" = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        self.evictions = 0

    def get(self, path: str, size: int) -> np.ndarray:
        key = (path, size)
        with self._lock:
            img = self._items.get(key)
            if img is not None:
                self._items.move_to_end(key)
                self.hits += 1
                return img
            self.misses += 1
        img = load_image(path, size)
        img.flags.writeable = False
        with self._lock:
            if self.max_items != 0:
                self._items[key] = img
                self._items.move_to_end(key)
                while self.max_items is not None and len(self._items) > self.max_items:
                    self._items.popitem(last=False)
                    self.evictions += 1
        return img

    def __contains__(self, key: Tuple[str, int]) -> bool:
        return key in self._items

    def __len__(self) -> int:
        return len(self._items)


@dataclass
class Batch:
    images: np.ndarray  # B×3×H×W float32
    labels: np.ndarray  # B int64
    indices: np.ndarray  # positions in the manifest

    def __len__(self) -> int:
        return int(self.labels.shape[0])


def epoch_order(n: int, seed: int, epoch: int, shuffle: bool = True) -> np.ndarray:
    if not shuffle:
        return np.arange(n)
    return np.random.default_rng([seed, epoch]).permutation(n)


def batch_iterator(
    manifest: DatasetManifest,
    batch_size: int,
    size: int,
    seed: int = 0,
    epoch: int = 0,
    shuffle: bool = True,
    spec: Optional[AugmentationSpec] = None,
    workers: int = 0,
    cache: Optional[ImageCache] = None,
) -> Iterator[Batch]:
    """Yield batches of `batch_size` (the last one may be smaller)."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if cache is None:
        cache = ImageCache(max_items=0)
    order = epoch_order(len(manifest), seed, epoch, shuffle)

    def produce(idx: int) -> np.ndarray:
        e = manifest.entries[idx]
        img = cache.get(manifest.resolve(e), size)
        if spec is not None and spec.enabled:
            img = augment_image(img, spec, np.random.default_rng([seed, epoch, int(idx), e.aug_seed]))
        return img

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 0 else None
    try:
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            images = list(pool.map(produce, idx)) if pool else [produce(i) for i in idx]
            labels = np.array([manifest.entries[i].label for i in idx], dtype=np.int64)
            yield Batch(np.stack(images).astype(np.float32, copy=False), labels, np.asarray(idx))
    finally:
        if pool is not None:
            pool.shutdown(wait=True)
