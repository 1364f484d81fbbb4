"""Weight initializers. All draws come from the caller's numpy Generator."""

import math
from typing import Sequence

import numpy as np

LINEAR_STD = 0.02


def trunc_normal(rng: np.random.Generator, shape: Sequence[int], std: float = LINEAR_STD, bound: float = 2.0) -> np.ndarray:
    """Normal(0, std) truncated to ±bound·std by redrawing out-of-range values."""
    out = rng.normal(0.0, std, size=tuple(shape))
    limit = bound * std
    bad = np.abs(out) > limit
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > limit
    return out


def he_normal(rng: np.random.Generator, shape: Sequence[int]) -> np.ndarray:
    """Conv weights out×(in/groups)×kH×kW; std = √(2 / fan_in)."""
    fan_in = int(np.prod(shape[1:]))
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=tuple(shape))


def zeros(shape: Sequence[int]) -> np.ndarray:
    return np.zeros(tuple(shape))


def ones(shape: Sequence[int]) -> np.ndarray:
    return np.ones(tuple(shape))
