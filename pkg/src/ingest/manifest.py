"""
Dataset manifest: which image belongs to which class and which split.

File format (UTF-8, LF): one `relative/path<TAB>class_name` record per line,
paths relative to the manifest's directory.
"""

import logging
import math
import os
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import ConfigError, ContractError, IngestionError

logger = logging.getLogger(__name__)

CLASS_NAMES: Tuple[str, ...] = ("Bacterial Blight", "Brown Streak", "Green Mottle", "Healthy", "Mosaic")
SPLITS = ("train", "test")


@dataclass(frozen=True)
class LabelSet:
    names: Tuple[str, ...] = CLASS_NAMES

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(name) from None

    def name(self, i: int) -> str:
        return self.names[i]

    def __len__(self) -> int:
        return len(self.names)


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: int
    split: str = "train"
    aug_seed: int = 0


@dataclass
class Sample:
    image: np.ndarray  # float32 3×H×W in [0, 1]
    label: int
    source: str


@dataclass
class DatasetManifest:
    entries: List[ManifestEntry] = field(default_factory=list)
    root: str = "."
    labels: LabelSet = field(default_factory=LabelSet)
    seed: Optional[int] = None

    def __len__(self) -> int:
        return len(self.entries)

    def resolve(self, entry: ManifestEntry) -> str:
        return entry.path if os.path.isabs(entry.path) else os.path.join(self.root, entry.path)

    def subset(self, split: str) -> "DatasetManifest":
        if split not in SPLITS:
            raise ConfigError(f"unknown split '{split}' (choose from {', '.join(SPLITS)})", "split")
        return replace(self, entries=[e for e in self.entries if e.split == split])

    def class_counts(self) -> Dict[int, int]:
        counts = Counter(e.label for e in self.entries)
        return {k: counts.get(k, 0) for k in range(len(self.labels))}

    def label_array(self) -> np.ndarray:
        return np.array([e.label for e in self.entries], dtype=np.int64)


def read_manifest(path: str, labels: Optional[LabelSet] = None) -> DatasetManifest:
    labels = labels or LabelSet()
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().split("\n")
    except OSError as e:
        raise IngestionError(path, f"cannot read manifest: {e}") from e

    entries: List[ManifestEntry] = []
    seen = set()
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\r")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise IngestionError(path, f"line {lineno}: expected 'path<TAB>class_name'")
        rel, name = parts[0].strip(), parts[1].strip()
        try:
            label = labels.index(name)
        except KeyError:
            raise IngestionError(path, f"line {lineno}: unknown class '{name}'") from None
        if rel in seen:
            raise IngestionError(path, f"line {lineno}: duplicate path '{rel}'")
        seen.add(rel)
        entries.append(ManifestEntry(rel, label))
    logger.debug("read %d manifest entries from %s", len(entries), path)
    return DatasetManifest(entries, root=os.path.dirname(os.path.abspath(path)), labels=labels)


def write_manifest(manifest: DatasetManifest, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for e in manifest.entries:
            f.write(f"{e.path}\t{manifest.labels.name(e.label)}\n")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stratified_split(manifest: DatasetManifest, test_fraction: float = 0.2, seed: int = 0) -> DatasetManifest:
    """
    Tag every entry train or test. Each class sends round(fraction·size)
    entries to test (at least 1, at most size−1), chosen by a generator seeded
    with (seed, class). Entry order is preserved.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"must be in (0, 1), got {test_fraction}", "data.test_fraction")
    paths = [e.path for e in manifest.entries]
    if len(set(paths)) != len(paths):
        raise ContractError("stratified_split needs a manifest without duplicate paths")

    by_class: Dict[int, List[int]] = {}
    for i, e in enumerate(manifest.entries):
        by_class.setdefault(e.label, []).append(i)

    test_idx = set()
    for label in sorted(by_class):
        members = by_class[label]
        n = len(members)
        if n < 2:
            raise ConfigError(f"class '{manifest.labels.name(label)}' has {n} entries, at least 2 are needed",
                              "data.manifest")
        n_test = min(max(_round_half_up(test_fraction * n), 1), n - 1)
        perm = np.random.default_rng([seed, label]).permutation(n)
        test_idx.update(members[j] for j in perm[:n_test])

    entries = [replace(e, split="test" if i in test_idx else "train") for i, e in enumerate(manifest.entries)]
    return replace(manifest, entries=entries, seed=seed)


def minority_oversample(manifest: DatasetManifest, balance_factor: float = 1.0) -> DatasetManifest:
    """
    Duplicate entries of small classes until every class holds at least
    ceil(max class count × balance_factor). Duplicates cycle through the
    class's entries in order and each gets a fresh augmentation seed.
    """
    if any(e.split != "train" for e in manifest.entries):
        raise ContractError("minority_oversample applies to the train split only")
    if balance_factor <= 0:
        raise ConfigError(f"must be positive, got {balance_factor}", "data.balance_factor")
    counts = manifest.class_counts()
    present = {k: v for k, v in counts.items() if v > 0}
    if not present:
        return manifest
    target = math.ceil(max(present.values()) * balance_factor)
    next_seed = max((e.aug_seed for e in manifest.entries), default=0) + 1

    entries = list(manifest.entries)
    for label, count in present.items():
        members = [e for e in manifest.entries if e.label == label]
        for j in range(max(target - count, 0)):
            entries.append(replace(members[j % count], aug_seed=next_seed))
            next_seed += 1
    if len(entries) != len(manifest.entries):
        logger.info("oversampled train split from %d to %d entries", len(manifest.entries), len(entries))
    return replace(manifest, entries=entries)


def from_labels(labels: Sequence[int], prefix: str = "img") -> DatasetManifest:
    """Manifest of placeholder paths for the given label sequence (used with in-memory data)."""
    return DatasetManifest([ManifestEntry(f"{prefix}_{i:05d}", int(l)) for i, l in enumerate(labels)])
