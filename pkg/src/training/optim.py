"""
Adam with decoupled weight decay, and the step learning-rate schedule.

Parameters are updated by rebinding their buffers between steps; nothing
else mutates a Tensor.
"""

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from src.core.config import TrainConfig
from src.core.errors import ContractError, DimensionError, NumericError
from src.tensor.tensor import Tensor


@dataclass
class LrSchedule:
    base_lr: float = 1e-3
    decay_factor: float = 0.15
    period: int = 20

    @classmethod
    def from_config(cls, t: TrainConfig) -> "LrSchedule":
        return cls(t.base_lr, t.lr_decay_factor, t.lr_decay_period)


def lr_at(epoch: int, sched: LrSchedule) -> float:
    """base_lr · decay_factor^⌊epoch / period⌋"""
    if epoch < 0:
        raise ContractError(f"epoch must be >= 0, got {epoch}")
    return sched.base_lr * sched.decay_factor ** (epoch // sched.period)


@dataclass
class OptimizerState:
    m: Dict[str, np.ndarray] = field(default_factory=OrderedDict)
    v: Dict[str, np.ndarray] = field(default_factory=OrderedDict)
    t: int = 0


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> OptimizerState:
    """
    One bias-corrected Adam update, then decoupled decay p ← p − lr·wd·p.
    Parameters without a gradient entry are treated as having a zero gradient.
    """
    if lr <= 0:
        raise ContractError(f"learning rate must be positive, got {lr}")
    for name, g in grads.items():
        if name not in params:
            raise ContractError(f"gradient for unknown parameter '{name}'")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient", name)

    state.t += 1
    t = state.t
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        g = np.zeros(p.shape, dtype=p.data.dtype) if g is None else np.asarray(g, dtype=p.data.dtype)
        if g.shape != p.shape:
            raise DimensionError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.m[name], state.v[name] = m, v
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        new = p.data - lr * update
        if weight_decay:
            new = new - (lr * weight_decay) * new
        p.assign(new)
    return state


class Adam:
    def __init__(self, params: Mapping[str, Tensor], beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = OrderedDict(params)
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay
        self.state = OptimizerState()

    @classmethod
    def from_config(cls, params: Mapping[str, Tensor], t: TrainConfig) -> "Adam":
        return cls(params, t.beta1, t.beta2, t.adam_eps, t.weight_decay)

    def step(self, grads: Mapping[str, np.ndarray], lr: float) -> None:
        adam_step(self.params, grads, self.state, lr, self.beta1, self.beta2, self.eps, self.weight_decay)

    def load_state(self, state: OptimizerState) -> None:
        unknown = set(state.m) - set(self.params)
        if unknown:
            raise DimensionError(f"optimizer state for unknown parameters: {sorted(unknown)[:3]}")
        self.state = state
