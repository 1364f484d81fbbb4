from src.tensor.tensor import Tape, Tensor, active_tape, backward, row_major_strides
from src.tensor.gradcheck import GradReport, grad_check, relative_error
from src.tensor import ops

__all__ = [
    "Tape",
    "Tensor",
    "active_tape",
    "backward",
    "row_major_strides",
    "GradReport",
    "grad_check",
    "relative_error",
    "ops",
]
