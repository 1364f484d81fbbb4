"""
Two-component PCA by power iteration with deflation.

The covariance uses ddof=1, so each projected coordinate's sample variance
equals its eigenvalue. Each axis is signed so its largest-magnitude component
is positive.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from src.core.errors import ContractError, DimensionError

logger = logging.getLogger(__name__)


@dataclass
class PCAProjection:
    mean: np.ndarray  # D
    axes: np.ndarray  # 2×D, orthonormal rows
    coords: np.ndarray  # N×2
    explained_variance: np.ndarray  # (λ1, λ2), λ1 ≥ λ2
    explained_ratio: np.ndarray
    labels: Optional[np.ndarray] = None
    degenerate: bool = False


def _signed(v: np.ndarray) -> np.ndarray:
    return v if v[np.argmax(np.abs(v))] >= 0 else -v


def _power_iteration(C: np.ndarray, start: np.ndarray, against: Optional[np.ndarray],
                     max_iter: int, tol: float) -> np.ndarray:
    v = start
    if against is not None:
        v = v - against * (against @ v)
    v = v / np.linalg.norm(v)
    for _ in range(max_iter):
        w = C @ v
        if against is not None:
            w = w - against * (against @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return v
        w = w / norm
        # sign-invariant convergence test
        if min(np.linalg.norm(w - v), np.linalg.norm(w + v)) < tol:
            return w
        v = w
    logger.debug("power iteration stopped after %d iterations without reaching tol %.1e", max_iter, tol)
    return v


def _orthonormal_pair(D: int) -> np.ndarray:
    axes = np.zeros((2, D))
    axes[0, 0] = axes[1, 1] = 1.0
    return axes


def pca_2d(features: np.ndarray, labels: Optional[Sequence[int]] = None, seed: int = 0,
           max_iter: int = 20000, tol: float = 1e-13) -> PCAProjection:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"pca_2d expects an N×D matrix, got {X.shape}")
    N, D = X.shape
    if N < 3 or D < 2:
        raise ContractError(f"pca_2d needs N >= 3 and D >= 2, got {N}×{D}")
    mean = X.mean(axis=0)
    Xc = X - mean
    C = Xc.T @ Xc / (N - 1)
    total = float(np.trace(C))
    lab = None if labels is None else np.asarray(labels)

    if total <= 0.0:
        axes = _orthonormal_pair(D)
        return PCAProjection(mean, axes, Xc @ axes.T, np.zeros(2), np.zeros(2), lab, degenerate=True)

    rng = np.random.default_rng(seed)
    v1 = _signed(_power_iteration(C, rng.standard_normal(D), None, max_iter, tol))
    lam1 = float(v1 @ C @ v1)
    C2 = C - lam1 * np.outer(v1, v1)
    v2 = _power_iteration(C2, rng.standard_normal(D), v1, max_iter, tol)
    # re-orthogonalize against accumulated drift
    v2 = v2 - v1 * (v1 @ v2)
    v2 = _signed(v2 / np.linalg.norm(v2))
    lam2 = max(float(v2 @ C @ v2), 0.0)

    axes = np.stack([v1, v2])
    variance = np.array([lam1, lam2])
    return PCAProjection(mean, axes, Xc @ axes.T, variance, variance / total, lab)
