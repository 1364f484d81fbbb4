"""
Finite-difference gradient checker.

Compares tape gradients against central differences
(f(x+h) − f(x−h)) / 2h element by element, in float64 only.

Usage:
    report = grad_check(lambda x: ops.sum(ops.mul(x, x)), Tensor(x0, dtype="float64"))
    assert report.max_rel_error < 1e-6

    # several parameters at once: f takes no arguments and closes over them
    report = grad_check(lambda: loss_fn(model), model.named_parameters(), sample=8)
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional, Union

import numpy as np

from src.core.errors import ContractError, NumericError
from src.tensor.tensor import Tape, Tensor, backward

REL_ERROR_FLOOR = 1e-8


@dataclass
class GradReport:
    errors: Dict[str, float] = field(default_factory=dict)  # worst relative error per parameter
    max_rel_error: float = 0.0
    checked: int = 0
    skipped: int = 0

    @property
    def worst(self) -> Optional[str]:
        if not self.errors:
            return None
        return max(self.errors, key=self.errors.get)


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_ERROR_FLOOR)


def _scalar(loss: Tensor, where: str) -> float:
    if loss.size != 1:
        raise ContractError(f"grad_check needs a scalar-valued function, got shape {loss.shape}")
    value = loss.item()
    if not np.isfinite(value):
        raise NumericError(f"function value is {value}", where)
    return value


def grad_check(
    f: Callable[..., Tensor],
    inputs: Union[Tensor, Mapping[str, Tensor]],
    step: float = 1e-5,
    sample: Optional[int] = None,
    seed: int = 0,
    skip_below: float = 0.0,
) -> GradReport:
    """
    Check the tape gradient of a scalar function.

    `inputs` is either one Tensor (then `f(x)` is called) or a name → Tensor
    mapping (then `f()` is called and must close over the tensors). With
    `sample`, only that many randomly chosen elements per tensor are
    perturbed. Elements whose analytic and numeric gradients are both below
    `skip_below` are counted in `skipped` instead of compared.
    """
    if isinstance(inputs, Tensor):
        params = {"x": inputs}
        call = lambda: f(inputs)  # noqa: E731
    else:
        params = dict(inputs)
        call = f
    if not params:
        raise ContractError("grad_check needs at least one input tensor")
    for name, p in params.items():
        if p.dtype != "float64":
            raise ContractError(f"grad_check runs in float64, '{name}' is {p.dtype}")
        if not np.all(np.isfinite(p.data)):
            raise NumericError("input has non-finite values", name)
        p.requires_grad = True

    with Tape() as tape:
        loss = call()
    _scalar(loss, "f(x)")
    grads = backward(tape, loss)

    rng = np.random.default_rng(seed)
    report = GradReport()
    for name, p in params.items():
        analytic = grads[p.node_id].data.reshape(-1) if tape.owns(p) else np.zeros(p.size)
        if sample is not None and sample < p.size:
            idx = np.sort(rng.choice(p.size, size=sample, replace=False))
        else:
            idx = np.arange(p.size)

        base = p.data.copy()
        worst = 0.0
        try:
            for i in idx:
                bumped = base.copy()
                bumped.flat[i] = base.flat[i] + step
                p.assign(bumped)
                f_plus = _scalar(call(), name)
                bumped.flat[i] = base.flat[i] - step
                p.assign(bumped)
                f_minus = _scalar(call(), name)

                numeric = (f_plus - f_minus) / (2.0 * step)
                a = float(analytic[i])
                if not np.isfinite(a):
                    raise NumericError(f"analytic gradient at element {int(i)} is {a}", name)
                if max(abs(a), abs(numeric)) < skip_below:
                    report.skipped += 1
                    continue
                worst = max(worst, relative_error(a, numeric))
                report.checked += 1
        finally:
            p.assign(base)
        report.errors[name] = worst
        report.max_rel_error = max(report.max_rel_error, worst)
    return report
