"""
Parameter and multiply-accumulate accounting for a configuration.

Parameters are counted by registry traversal. MACs come from a batch-1
eval-mode forward with `count_macs()` active; every kernel reports its own
closed-form count, so the totals are exact for the executed graph.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from src.core.config import RunConfig
from src.models.hybrid import build_model
from src.nn.profiling import count_macs
from src.tensor.tensor import Tensor


@dataclass
class ModelCost:
    params: int
    macs: int
    macs_by_kind: Dict[str, int] = field(default_factory=dict)
    params_by_branch: Dict[str, int] = field(default_factory=dict)
    shapes: List[Tuple[str, Tuple[int, ...]]] = field(default_factory=list)

    @property
    def gmacs(self) -> float:
        return self.macs / 1e9


def count_params_flops(cfg: RunConfig, seed: int = 0) -> ModelCost:
    model = build_model(cfg, seed)
    model.eval()
    by_branch = {name: child.parameter_count() for name, child in model.children()}
    n = cfg.data.input_size
    x = Tensor(np.zeros((1, 3, n, n)), dtype=model.dtype)
    with count_macs() as counter:
        model(x)
    return ModelCost(
        params=model.parameter_count(),
        macs=counter.total,
        macs_by_kind=dict(counter.by_kind),
        params_by_branch=by_branch,
        shapes=model.shape_trace(),
    )
