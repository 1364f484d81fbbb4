"""
One-vs-rest ROC and precision-recall sweeps.

Thresholds are the unique scores in descending order; tied scores move
together, so a tie contributes a diagonal ROC segment. ROC-AUC is the
trapezoid area, computed in integer counts until the final division so it
equals the Mann-Whitney pair statistic exactly. PR-AUC is step-wise average
precision: Σ (Rᵢ − Rᵢ₋₁)·Pᵢ.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import ContractError, DimensionError

ROW_SUM_TOLERANCE = 1e-4


@dataclass
class CurvePoints:
    kind: str  # "roc" (x=FPR, y=TPR) or "pr" (x=recall, y=precision)
    class_name: str
    x: np.ndarray
    y: np.ndarray
    auc: float

    def __len__(self) -> int:
        return int(self.x.shape[0])


@dataclass
class CurveSet:
    roc: List[CurvePoints] = field(default_factory=list)
    pr: List[CurvePoints] = field(default_factory=list)
    roc_auc: Optional[float] = None
    pr_auc: Optional[float] = None
    flags: List[str] = field(default_factory=list)


def _sweep(scores: np.ndarray, positive: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Cumulative (TP, FP) at each distinct threshold, highest first."""
    order = np.argsort(-scores, kind="mergesort")
    s, pos = scores[order], positive[order].astype(np.int64)
    tp = np.cumsum(pos)
    fp = np.cumsum(1 - pos)
    last_of_tie = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    return tp[last_of_tie], fp[last_of_tie]


def binary_roc(scores: Sequence[float], positive: Sequence[bool]) -> Tuple[np.ndarray, np.ndarray, float]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(positive, dtype=bool).reshape(-1)
    if s.shape != y.shape:
        raise DimensionError(f"{s.size} scores for {y.size} labels")
    P, N = int(y.sum()), int((~y).sum())
    if P == 0 or N == 0:
        raise ContractError("ROC needs at least one positive and one negative")
    tp, fp = _sweep(s, y)
    tp = np.r_[0, tp]
    fp = np.r_[0, fp]
    # 2·area·P·N as an integer
    twice_area = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    return fp / N, tp / P, twice_area / (2 * P * N)


def binary_pr(scores: Sequence[float], positive: Sequence[bool]) -> Tuple[np.ndarray, np.ndarray, float]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(positive, dtype=bool).reshape(-1)
    if s.shape != y.shape:
        raise DimensionError(f"{s.size} scores for {y.size} labels")
    P = int(y.sum())
    if P == 0:
        raise ContractError("PR needs at least one positive")
    tp, fp = _sweep(s, y)
    recall = tp / P
    precision = tp / (tp + fp)
    ap = float(np.sum(np.diff(np.r_[0.0, recall]) * precision))
    return np.r_[0.0, recall], np.r_[1.0, precision], ap


def roc_pr_curves(probs: np.ndarray, labels: Sequence[int],
                  class_names: Optional[Sequence[str]] = None) -> CurveSet:
    """Per-class one-vs-rest curves with macro-averaged AUCs over the classes that could be scored."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if p.ndim != 2 or p.shape[0] != y.shape[0]:
        raise DimensionError(f"scores {p.shape} do not match {y.shape[0]} labels")
    if not np.all(np.abs(p.sum(axis=1) - 1.0) <= ROW_SUM_TOLERANCE):
        raise ContractError("score rows must sum to 1 (pass softmax probabilities)")
    K = p.shape[1]
    names = list(class_names) if class_names is not None else [str(k) for k in range(K)]

    out = CurveSet()
    for k in range(K):
        positive = y == k
        if not positive.any():
            out.flags.append(f"no_positives:{names[k]}")
            continue
        rec, pre, ap = binary_pr(p[:, k], positive)
        out.pr.append(CurvePoints("pr", names[k], rec, pre, ap))
        if positive.all():
            out.flags.append(f"no_negatives:{names[k]}")
            continue
        fpr, tpr, auc = binary_roc(p[:, k], positive)
        out.roc.append(CurvePoints("roc", names[k], fpr, tpr, auc))
    if out.roc:
        out.roc_auc = float(np.mean([c.auc for c in out.roc]))
    if out.pr:
        out.pr_auc = float(np.mean([c.auc for c in out.pr]))
    return out
