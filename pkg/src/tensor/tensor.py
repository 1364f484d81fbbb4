"""
Tensor and Tape: the value type every kernel works on, and the record that
makes reverse-mode differentiation possible.

A Tensor wraps a row-major numpy buffer of dtype float32 or float64. Tensors
are immutable: ops always build new buffers. The one sanctioned exception is
the optimizer (and the batch-norm running statistics), which rebinds `.data`
between steps.

Usage:
    tape = Tape()
    with tape:
        loss = ops.sum(ops.mul(x, x))
    grads = backward(tape, loss)       # {node_id: Tensor}
    grads[x.node_id]                   # == 2x
    tape.reset()                       # before the next step
"""

import itertools
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import ContractError, DimensionError

SUPPORTED_DTYPES = ("float32", "float64")

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_tape_ids = itertools.count(1)
_ACTIVE_TAPE: ContextVar[Optional["Tape"]] = ContextVar("hdsw_active_tape", default=None)


def row_major_strides(shape: Sequence[int]) -> Tuple[int, ...]:
    """Element strides of a C-ordered buffer: flat index = Σ iₖ·strideₖ."""
    strides = [1] * len(shape)
    for k in range(len(shape) - 2, -1, -1):
        strides[k] = strides[k + 1] * shape[k + 1]
    return tuple(strides)


class Tensor:
    __slots__ = ("data", "requires_grad", "node_id", "name", "_tape_key")

    def __init__(self, data, requires_grad: bool = False, dtype: Optional[str] = None, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype.name if isinstance(data, np.ndarray) and data.dtype.name in SUPPORTED_DTYPES else "float32"
        if dtype not in SUPPORTED_DTYPES:
            raise ContractError(f"unsupported dtype {dtype!r}; use one of {SUPPORTED_DTYPES}")
        arr = np.array(data, dtype=dtype, copy=True, order="C")
        if any(n <= 0 for n in arr.shape):
            raise DimensionError(f"tensor extents must be positive, got shape {arr.shape}")
        arr.flags.writeable = False
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.node_id: Optional[int] = None
        self.name = name
        self._tape_key: Optional[Tuple[int, int]] = None

    @classmethod
    def wrap(cls, arr: np.ndarray, name: Optional[str] = None) -> "Tensor":
        """Adopt a freshly computed buffer without copying (internal fast path)."""
        t = cls.__new__(cls)
        arr = np.asarray(arr)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        if arr.flags.writeable:
            arr.flags.writeable = False
        t.data = arr
        t.requires_grad = False
        t.node_id = None
        t.name = name
        t._tape_key = None
        return t

    # ── Introspection ────────────────────────────────────────────────────
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> str:
        return self.data.dtype.name

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def assign(self, arr: np.ndarray) -> None:
        """Rebind the buffer (optimizer and running statistics only)."""
        arr = np.array(arr, dtype=self.dtype, copy=True, order="C")
        if arr.shape != self.shape:
            raise DimensionError(f"cannot assign shape {arr.shape} to tensor of shape {self.shape}")
        arr.flags.writeable = False
        self.data = arr

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        label = f" {self.name}" if self.name else ""
        return f"<Tensor{label} shape={self.shape} dtype={self.dtype}{grad}>"

    # ── Operator sugar (delegates to src.tensor.ops) ─────────────────────
    def __add__(self, other):
        from src.tensor import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from src.tensor import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from src.tensor import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from src.tensor import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from src.tensor import ops
        return ops.matmul(self, other)

    def reshape(self, *shape):
        from src.tensor import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def permute(self, *axes):
        from src.tensor import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.permute(self, axes)


# ── Tape ─────────────────────────────────────────────────────────────────

@dataclass
class TapeNode:
    op: str
    inputs: Tuple[Optional[int], ...]
    output: int
    backward: BackwardFn


class Tape:
    """
    Ordered record of differentiable ops.

    Node ids are issued in execution order, so every node's inputs precede it
    and a single reverse sweep visits each node exactly once. A tape has one
    owner; concurrent evaluation workers run without a tape.
    """

    def __init__(self):
        self.uid = next(_tape_ids)
        self.generation = 0
        self.nodes: List[TapeNode] = []
        self.leaves: Dict[int, Tensor] = {}
        self._next_id = 0
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None
        return False

    @property
    def key(self) -> Tuple[int, int]:
        return (self.uid, self.generation)

    def reset(self) -> None:
        self.generation += 1
        self.nodes = []
        self.leaves = {}
        self._next_id = 0

    def owns(self, t: Tensor) -> bool:
        return t.node_id is not None and t._tape_key == self.key

    def _issue(self, t: Tensor) -> int:
        t.node_id = self._next_id
        t._tape_key = self.key
        self._next_id += 1
        return t.node_id

    def track(self, t: Tensor) -> Optional[int]:
        if self.owns(t):
            return t.node_id
        if t.requires_grad:
            nid = self._issue(t)
            self.leaves[nid] = t
            return nid
        return None

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor, backward: BackwardFn) -> None:
        ids = tuple(self.track(t) for t in inputs)
        if all(i is None for i in ids):
            return
        self._issue(output)
        output.requires_grad = True
        self.nodes.append(TapeNode(op, ids, output.node_id, backward))

    def __len__(self) -> int:
        return len(self.nodes)


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE.get()


def record(op: str, inputs: Sequence[Tensor], output: Tensor, backward: BackwardFn) -> Tensor:
    """Put `output` on the active tape (no-op in inference mode)."""
    tape = _ACTIVE_TAPE.get()
    if tape is not None:
        tape.record(op, inputs, output, backward)
    return output


def backward(tape: Tape, loss: Tensor) -> Dict[int, Tensor]:
    """
    Reverse sweep from a scalar loss.

    Returns a gradient for every requires_grad leaf seen by the tape; leaves with
    no path to the loss get zeros. The tape is not modified, so repeated calls
    give bit-equal results.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not tape.owns(loss):
        raise ContractError("loss was not produced on this tape")

    grads: Dict[int, np.ndarray] = {loss.node_id: np.ones(loss.shape, dtype=loss.dtype)}
    for node in reversed(tape.nodes):
        g = grads.get(node.output)
        if g is None:
            continue
        in_grads = node.backward(g)
        for nid, ig in zip(node.inputs, in_grads):
            if nid is None or ig is None:
                continue
            if nid in grads:
                grads[nid] = grads[nid] + ig
            else:
                grads[nid] = ig

    out: Dict[int, Tensor] = {}
    for nid, leaf in tape.leaves.items():
        g = grads.get(nid)
        out[nid] = Tensor.wrap(np.zeros(leaf.shape, dtype=leaf.dtype) if g is None else np.asarray(g, dtype=leaf.dtype))
    return out
