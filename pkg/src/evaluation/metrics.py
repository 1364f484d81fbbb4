"""
Confusion matrix and the rates derived from it.

Layout is cm[target][predicted]. Per class c (one-vs-rest):
    TP = cm[c,c]   FP = column sum − TP   FN = row sum − TP   TN = total − TP − FP − FN
    accuracy    (TP + TN) / total        overall accuracy = trace / total
    sensitivity TP / (TP + FN)
    precision   TP / (TP + FP)
    F1          2·P·S / (P + S)
    specificity TN / (TN + FP)
A zero denominator yields 0 and a flag in the report.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import ContractError

Z_95 = 1.96


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # K×K int64, [target][predicted]
    class_names: Tuple[str, ...]

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        K = self.counts.shape[0]
        if self.counts.ndim != 2 or self.counts.shape != (K, K):
            raise ContractError(f"confusion matrix must be square, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise ContractError("confusion counts must be non-negative")
        if len(self.class_names) != K:
            raise ContractError(f"{len(self.class_names)} class names for a {K}×{K} matrix")

    @property
    def K(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def trace(self) -> int:
        return int(np.trace(self.counts))

    def tp(self) -> np.ndarray:
        return np.diag(self.counts).copy()

    def fp(self) -> np.ndarray:
        return self.counts.sum(axis=0) - self.tp()

    def fn(self) -> np.ndarray:
        return self.counts.sum(axis=1) - self.tp()

    def tn(self) -> np.ndarray:
        return self.total - self.tp() - self.fp() - self.fn()


def confusion(preds: Sequence[int], labels: Sequence[int], K: int,
              class_names: Optional[Sequence[str]] = None) -> ConfusionMatrix:
    p = np.asarray(preds, dtype=np.int64).reshape(-1)
    t = np.asarray(labels, dtype=np.int64).reshape(-1)
    if p.shape != t.shape:
        raise ContractError(f"{p.size} predictions for {t.size} labels")
    if p.size and (min(p.min(), t.min()) < 0 or max(p.max(), t.max()) >= K):
        raise ContractError(f"predictions and labels must be in [0, {K})")
    counts = np.zeros((K, K), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    names = tuple(class_names) if class_names is not None else tuple(str(k) for k in range(K))
    return ConfusionMatrix(counts, names)


def safe_ratio(num: float, den: float) -> Tuple[float, bool]:
    """num/den, or (0, True) when den is 0."""
    if den == 0:
        return 0.0, True
    return num / den, False


def f1_score(precision: float, sensitivity: float) -> float:
    if precision + sensitivity == 0:
        return 0.0
    return 2.0 * precision * sensitivity / (precision + sensitivity)


def sensitivity_ci(sen: float, n: int, z: float = Z_95) -> Tuple[float, float]:
    """Normal-approximation interval sen ± z·√(sen(1−sen)/n), clamped to [0, 1]."""
    if not 0.0 <= sen <= 1.0:
        raise ContractError(f"sensitivity must be in [0, 1], got {sen}")
    if n < 1:
        raise ContractError(f"n must be >= 1, got {n}")
    half = z * math.sqrt(sen * (1.0 - sen) / n)
    return max(0.0, sen - half), min(1.0, sen + half)


@dataclass
class ClassMetrics:
    name: str
    tp: int
    fp: int
    fn: int
    tn: int
    accuracy: float
    sensitivity: float
    precision: float
    f1: float
    specificity: float


@dataclass
class MetricsReport:
    accuracy: float
    classes: List[ClassMetrics]
    macro_sensitivity: float
    macro_precision: float
    macro_f1: float
    micro_sensitivity: float
    micro_precision: float
    micro_f1: float
    sensitivity_ci: Tuple[float, float]
    total: int
    flags: List[str] = field(default_factory=list)
    roc_auc: Optional[float] = None
    pr_auc: Optional[float] = None
    class_roc_auc: Dict[str, float] = field(default_factory=dict)
    class_pr_auc: Dict[str, float] = field(default_factory=dict)

    def by_name(self, name: str) -> ClassMetrics:
        for c in self.classes:
            if c.name == name:
                return c
        raise KeyError(name)

    def rows(self) -> List[Tuple[str, str, float]]:
        """Long format (metric, class, value)."""
        out = [("accuracy", "overall", self.accuracy)]
        for c in self.classes:
            out += [("accuracy", c.name, c.accuracy), ("sensitivity", c.name, c.sensitivity),
                    ("precision", c.name, c.precision), ("f1", c.name, c.f1),
                    ("specificity", c.name, c.specificity)]
        out += [("sensitivity", "macro", self.macro_sensitivity), ("precision", "macro", self.macro_precision),
                ("f1", "macro", self.macro_f1), ("sensitivity", "micro", self.micro_sensitivity),
                ("precision", "micro", self.micro_precision), ("f1", "micro", self.micro_f1),
                ("sensitivity_ci_low", "macro", self.sensitivity_ci[0]),
                ("sensitivity_ci_high", "macro", self.sensitivity_ci[1])]
        if self.roc_auc is not None:
            out.append(("roc_auc", "macro", self.roc_auc))
            out += [("roc_auc", k, v) for k, v in self.class_roc_auc.items()]
        if self.pr_auc is not None:
            out.append(("pr_auc", "macro", self.pr_auc))
            out += [("pr_auc", k, v) for k, v in self.class_pr_auc.items()]
        return out

    def summary(self) -> str:
        return (f"Acc {100 * self.accuracy:.2f}%  Sen {100 * self.macro_sensitivity:.2f}%  "
                f"Pre {100 * self.macro_precision:.2f}%  F1 {100 * self.macro_f1:.2f}%")


def metrics_from_cm(cm: ConfusionMatrix, ci_n: Optional[int] = None) -> MetricsReport:
    """All count-based rates; `ci_n` defaults to the matrix total."""
    total = cm.total
    if total == 0:
        raise ContractError("cannot compute metrics from an empty confusion matrix")
    flags: List[str] = []
    tp, fp, fn, tn = cm.tp(), cm.fp(), cm.fn(), cm.tn()
    classes = []
    for k, name in enumerate(cm.class_names):
        sen, bad_sen = safe_ratio(int(tp[k]), int(tp[k] + fn[k]))
        pre, bad_pre = safe_ratio(int(tp[k]), int(tp[k] + fp[k]))
        spec, bad_spec = safe_ratio(int(tn[k]), int(tn[k] + fp[k]))
        if bad_sen:
            flags.append(f"sensitivity_undefined:{name}")
        if bad_pre:
            flags.append(f"precision_undefined:{name}")
        if bad_spec:
            flags.append(f"specificity_undefined:{name}")
        classes.append(ClassMetrics(name, int(tp[k]), int(fp[k]), int(fn[k]), int(tn[k]),
                                    (int(tp[k]) + int(tn[k])) / total, sen, pre, f1_score(pre, sen), spec))

    macro_sen = float(np.mean([c.sensitivity for c in classes]))
    macro_pre = float(np.mean([c.precision for c in classes]))
    macro_f1 = float(np.mean([c.f1 for c in classes]))
    micro_sen, _ = safe_ratio(int(tp.sum()), int((tp + fn).sum()))
    micro_pre, _ = safe_ratio(int(tp.sum()), int((tp + fp).sum()))
    return MetricsReport(
        accuracy=cm.trace / total,
        classes=classes,
        macro_sensitivity=macro_sen,
        macro_precision=macro_pre,
        macro_f1=macro_f1,
        micro_sensitivity=micro_sen,
        micro_precision=micro_pre,
        micro_f1=f1_score(micro_pre, micro_sen),
        sensitivity_ci=sensitivity_ci(min(max(macro_sen, 0.0), 1.0), ci_n or total),
        total=total,
        flags=flags,
    )
