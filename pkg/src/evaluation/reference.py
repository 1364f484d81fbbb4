"""
Published reference numbers for the four model variants.

The confusion matrices were printed with predicted classes as rows; they are
stored here transposed, as cm[target][predicted], so they feed straight into
metrics_from_cm. Table rows are percentages; FLOPs in GFLOPs.
"""

from dataclasses import dataclass
from typing import Dict, Mapping

import numpy as np

from src.evaluation.metrics import ConfusionMatrix
from src.ingest.manifest import CLASS_NAMES

# rows: predicted class, columns: target class (as printed)
_PRINTED: Dict[str, list] = {
    "ca_dense_swinv2": [
        [1444, 8, 6, 2, 5],
        [10, 1318, 8, 2, 3],
        [5, 7, 1383, 1, 5],
        [3, 2, 2, 1254, 4],
        [2, 4, 5, 7, 746],
    ],
    "dense_swinv2": [
        [1435, 10, 9, 4, 6],
        [12, 1312, 11, 3, 4],
        [8, 9, 1376, 2, 7],
        [4, 3, 2, 1248, 5],
        [5, 5, 6, 9, 741],
    ],
    "ca_swinv2": [
        [1430, 12, 15, 7, 6],
        [14, 1305, 11, 3, 7],
        [11, 14, 1366, 2, 7],
        [4, 2, 2, 1245, 5],
        [5, 6, 10, 9, 738],
    ],
    "customized_swinv2": [
        [1426, 13, 19, 10, 10],
        [15, 1298, 11, 3, 7],
        [14, 18, 1356, 6, 10],
        [4, 5, 6, 1237, 5],
        [5, 5, 12, 10, 731],
    ],
}


@dataclass(frozen=True)
class TableRow:
    accuracy: float
    sensitivity: float
    precision: float
    f1: float
    gflops: float

    def as_dict(self) -> Dict[str, float]:
        return {"accuracy": self.accuracy, "sensitivity": self.sensitivity,
                "precision": self.precision, "f1": self.f1}


TABLE: Dict[str, TableRow] = {
    "customized_swinv2": TableRow(97.01, 96.37, 96.99, 96.56, 9.2),
    "ca_swinv2": TableRow(97.62, 97.01, 97.42, 97.21, 11.0),
    "dense_swinv2": TableRow(98.02, 97.61, 98.01, 97.81, 15.0),
    "ca_dense_swinv2": TableRow(98.51, 98.48, 98.53, 98.51, 14.8),
}

# per-class image counts of the full dataset
DATASET_COUNTS = (7322, 6695, 7018, 6330, 3814)
PUBLISHED_TEST_TOTAL = 5738


def reference_matrix(variant: str) -> ConfusionMatrix:
    return ConfusionMatrix(np.asarray(_PRINTED[variant], dtype=np.int64).T, CLASS_NAMES)


def reference_matrices() -> Dict[str, ConfusionMatrix]:
    return {v: reference_matrix(v) for v in _PRINTED}


def performance_gain(ours: Mapping[str, float], baseline: Mapping[str, float]) -> Dict[str, float]:
    """Relative gain in percent, (ours − baseline) / baseline · 100, per shared metric."""
    return {k: (ours[k] - baseline[k]) / baseline[k] * 100.0 for k in ours if k in baseline and baseline[k]}
