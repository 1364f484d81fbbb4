"""
Differentiable tensor ops.

Rules shared by every op here:
  - operands must have the same dtype (DTypeError otherwise);
  - elementwise ops need equal shapes; the only broadcasting is the explicit
    `broadcast_to` op and scalar `scale`;
  - each op records its backward rule on the active tape, if any.
"""

import math
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from src.core.errors import ContractError, DimensionError, DTypeError
from src.tensor.tensor import Tensor, record

Axis = Union[int, Tuple[int, ...], None]

_GELU_C = math.sqrt(2.0 / math.pi)


def _same_dtype(op: str, *tensors: Tensor) -> None:
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise DTypeError(f"{op}: mixed dtypes {sorted(dtypes)} (no implicit promotion)")


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _axis(axis: int, ndim: int, op: str) -> int:
    if not -ndim <= axis < ndim:
        raise DimensionError(f"{op}: axis {axis} out of range for rank {ndim}")
    return axis % ndim


def constant(arr, dtype: str = "float32") -> Tensor:
    return Tensor(arr, dtype=dtype)


# ── Linear algebra ───────────────────────────────────────────────────────

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes must match exactly."""
    _same_dtype("matmul", a, b)
    if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    out = Tensor.wrap(np.matmul(ad, bd))

    def backward(g):
        return np.matmul(g, np.swapaxes(bd, -1, -2)), np.matmul(np.swapaxes(ad, -1, -2), g)

    return record("matmul", (a, b), out, backward)


# ── Elementwise ──────────────────────────────────────────────────────────

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype("add", a, b)
    _same_shape("add", a, b)
    out = Tensor.wrap(a.data + b.data)
    return record("add", (a, b), out, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype("sub", a, b)
    _same_shape("sub", a, b)
    out = Tensor.wrap(a.data - b.data)
    return record("sub", (a, b), out, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype("mul", a, b)
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    out = Tensor.wrap(ad * bd)
    return record("mul", (a, b), out, lambda g: (g * bd, g * ad))


def elementwise(a: Tensor, b: Tensor, op: str) -> Tensor:
    if op == "add":
        return add(a, b)
    if op == "mul":
        return mul(a, b)
    raise ContractError(f"unknown binary op {op!r}")


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)
    out = Tensor.wrap(x.data * x.data.dtype.type(s))
    return record("scale", (x,), out, lambda g: (g * g.dtype.type(s),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor.wrap(np.where(mask, x.data, 0).astype(x.dtype, copy=False))
    return record("relu", (x,), out, lambda g: (g * mask,))


def gelu(x: Tensor) -> Tensor:
    """tanh approximation: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))."""
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd ** 3)
    t = np.tanh(inner)
    out = Tensor.wrap((0.5 * xd * (1.0 + t)).astype(x.dtype, copy=False))

    def backward(g):
        d = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * xd * xd)
        return ((g * d).astype(g.dtype, copy=False),)

    return record("gelu", (x,), out, backward)


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # split by sign so exp never overflows
    pos = xd >= 0
    z = np.exp(-np.abs(xd))
    y = np.where(pos, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype, copy=False)
    out = Tensor.wrap(y)
    return record("sigmoid", (x,), out, lambda g: (g * y * (1 - y),))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    out = Tensor.wrap(y)
    return record("exp", (x,), out, lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    out = Tensor.wrap(np.log(xd))
    return record("log", (x,), out, lambda g: (g / xd,))


def unary(x: Tensor, op: str, s: Optional[float] = None) -> Tensor:
    if op == "relu":
        return relu(x)
    if op == "gelu":
        return gelu(x)
    if op == "sigmoid":
        return sigmoid(x)
    if op == "scale":
        if s is None:
            raise ContractError("scale needs a factor")
        return scale(x, s)
    raise ContractError(f"unknown unary op {op!r}")


# ── Reductions / normalization ───────────────────────────────────────────

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    ax = _axis(axis, x.ndim, "softmax")
    if x.shape[ax] == 0:
        raise DimensionError("softmax over an empty axis")
    shifted = x.data - np.max(x.data, axis=ax, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=ax, keepdims=True)
    out = Tensor.wrap(y)

    def backward(g):
        return (y * (g - np.sum(g * y, axis=ax, keepdims=True)),)

    return record("softmax", (x,), out, backward)


def sum(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    xshape = x.shape
    out = Tensor.wrap(np.asarray(np.sum(x.data, axis=axis, keepdims=keepdims), dtype=x.dtype))

    def backward(g):
        if axis is not None and not keepdims:
            axes = (axis,) if isinstance(axis, int) else axis
            g = np.expand_dims(g, tuple(a % len(xshape) for a in axes))
        return (np.broadcast_to(g, xshape),)

    return record("sum", (x,), out, backward)


def mean(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


# ── Shape ops ────────────────────────────────────────────────────────────

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    xshape = x.shape
    try:
        arr = x.data.reshape(tuple(shape))
    except ValueError as e:
        raise DimensionError(f"reshape: cannot view {xshape} as {tuple(shape)}") from e
    out = Tensor.wrap(arr)
    return record("reshape", (x,), out, lambda g: (g.reshape(xshape),))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise DimensionError(f"permute: {axes} is not a permutation of rank {x.ndim}")
    inverse = tuple(np.argsort(axes))
    out = Tensor.wrap(np.transpose(x.data, axes))
    return record("permute", (x,), out, lambda g: (np.transpose(g, inverse),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise DimensionError("concat of an empty list")
    _same_dtype("concat", *tensors)
    ref = tensors[0]
    ax = _axis(axis, ref.ndim, "concat")
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax):
            raise DimensionError(f"concat: incompatible shapes {ref.shape} and {t.shape} on axis {ax}")
    if len(tensors) == 1:
        return ref
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    out = Tensor.wrap(np.concatenate([t.data for t in tensors], axis=ax))
    return record("concat", tuple(tensors), out, lambda g: tuple(np.split(g, cuts, axis=ax)))


def cyclic_shift(x: Tensor, dy: int, dx: int) -> Tensor:
    """Toroidal roll of the (H, W) axes of a …×H×W×C tensor; channels untouched."""
    if x.ndim < 3:
        raise DimensionError(f"cyclic_shift expects …×H×W×C, got shape {x.shape}")
    H, W = x.shape[-3], x.shape[-2]
    dy, dx = dy % H, dx % W
    if dy == 0 and dx == 0:
        return x
    out = Tensor.wrap(np.roll(x.data, (dy, dx), axis=(-3, -2)))
    return record("cyclic_shift", (x,), out, lambda g: (np.roll(g, (-dy, -dx), axis=(-3, -2)),))


def take(x: Tensor, indices: np.ndarray, axis: int = 0) -> Tensor:
    """Gather slices of x along `axis` (used for the relative position bias table)."""
    ax = _axis(axis, x.ndim, "take")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[ax]):
        raise DimensionError(f"take: index out of range for extent {x.shape[ax]}")
    xshape = x.shape
    out = Tensor.wrap(np.take(x.data, idx, axis=ax))

    def backward(g):
        gx = np.zeros(xshape, dtype=g.dtype)
        moved = np.moveaxis(gx, ax, 0)
        np.add.at(moved, idx.reshape(-1), np.moveaxis(g, ax, 0).reshape((idx.size,) + moved.shape[1:]))
        return (gx,)

    return record("take", (x,), out, backward)


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit broadcast (the only one allowed); the backward sums over expanded axes."""
    shape = tuple(shape)
    if x.ndim != len(shape) or any(s != t and s != 1 for s, t in zip(x.shape, shape)):
        raise DimensionError(f"broadcast_to: cannot expand {x.shape} to {shape}")
    xshape = x.shape
    expanded = tuple(i for i, (s, t) in enumerate(zip(xshape, shape)) if s == 1 and t != 1)
    out = Tensor.wrap(np.broadcast_to(x.data, shape))

    def backward(g):
        return (np.sum(g, axis=expanded, keepdims=True) if expanded else g,)

    return record("broadcast_to", (x,), out, backward)


def scale_by(s: Tensor, x: Tensor) -> Tensor:
    """Learnable scalar times tensor: s has a single element."""
    if s.size != 1:
        raise DimensionError(f"scale_by expects a single-element scale, got {s.shape}")
    return mul(broadcast_to(reshape(s, (1,) * x.ndim), x.shape), x)
