"""
Neural network layers: functional kernels with taped backward rules, and
thin Module wrappers that own the parameters.

Layouts: images are B×C×H×W, token maps are B×H×W×C, linear layers act on
the last axis.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.core.errors import ContractError, DimensionError, DTypeError
from src.nn import init
from src.nn.module import Module
from src.nn.profiling import record_macs
from src.tensor import ops
from src.tensor.tensor import Tensor, record


def _check_dtypes(op: str, *tensors: Optional[Tensor]) -> None:
    dtypes = {t.dtype for t in tensors if t is not None}
    if len(dtypes) > 1:
        raise DTypeError(f"{op}: mixed dtypes {sorted(dtypes)}")


# ── Convolution ──────────────────────────────────────────────────────────

@dataclass
class Conv2dParams:
    weight: Tensor  # out × in/groups × kH × kW
    bias: Optional[Tensor] = None
    stride: int = 1
    padding: int = 0
    groups: int = 1


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x: Tensor, p: Conv2dParams) -> Tensor:
    """2D cross-correlation with zero padding, via im2col and a grouped matmul."""
    w = p.weight
    _check_dtypes("conv2d", x, w, p.bias)
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects B×C×H×W input and a 4-D weight, got {x.shape} and {w.shape}")
    B, C, H, W = x.shape
    O, Cg, kh, kw = w.shape
    G, s, pad = p.groups, p.stride, p.padding
    if G < 1 or C % G or O % G or C // G != Cg:
        raise DimensionError(f"conv2d: {C} input / {O} output channels do not fit groups={G} with weight {w.shape}")
    if s < 1 or pad < 0:
        raise ContractError(f"conv2d: stride must be >= 1 and padding >= 0 (got {s}, {pad})")
    Hp, Wp = H + 2 * pad, W + 2 * pad
    if Hp < kh or Wp < kw:
        raise DimensionError(f"conv2d: padded input {Hp}×{Wp} is smaller than kernel {kh}×{kw}")
    if p.bias is not None and p.bias.shape != (O,):
        raise DimensionError(f"conv2d: bias shape {p.bias.shape} != ({O},)")

    Ho, Wo = conv_output_size(H, kh, s, pad), conv_output_size(W, kw, s, pad)
    Og, K = O // G, Cg * kh * kw
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]  # B, C, Ho, Wo, kh, kw
    cols = win.reshape(B, G, Cg, Ho, Wo, kh, kw).transpose(1, 0, 3, 4, 2, 5, 6).reshape(G, B * Ho * Wo, K)
    wm = w.data.reshape(G, Og, K).transpose(0, 2, 1)  # G, K, Og

    y = np.matmul(cols, wm).reshape(G, B, Ho, Wo, Og).transpose(1, 0, 4, 2, 3).reshape(B, O, Ho, Wo)
    if p.bias is not None:
        y = y + p.bias.data.reshape(1, O, 1, 1)
    record_macs("conv", B * O * Ho * Wo * K)
    out = Tensor.wrap(y)

    def backward(g):
        go = g.reshape(B, G, Og, Ho, Wo).transpose(1, 0, 3, 4, 2).reshape(G, B * Ho * Wo, Og)
        dw = np.matmul(cols.transpose(0, 2, 1), go).transpose(0, 2, 1).reshape(O, Cg, kh, kw)
        dcols = np.matmul(go, wm.transpose(0, 2, 1))
        dcols = dcols.reshape(G, B, Ho, Wo, Cg, kh, kw).transpose(1, 0, 4, 2, 3, 5, 6).reshape(B, C, Ho, Wo, kh, kw)
        dxp = np.zeros((B, C, Hp, Wp), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + s * (Ho - 1) + 1:s, j:j + s * (Wo - 1) + 1:s] += dcols[..., i, j]
        dx = dxp[:, :, pad:pad + H, pad:pad + W] if pad else dxp
        grads = [dx, dw]
        if p.bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    inputs = (x, w) if p.bias is None else (x, w, p.bias)
    return record("conv2d", inputs, out, backward)


# ── Linear ───────────────────────────────────────────────────────────────

def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x·weightᵀ + bias over the last axis; any leading axes."""
    _check_dtypes("linear", x, weight, bias)
    if weight.ndim != 2:
        raise DimensionError(f"linear weight must be out×in, got {weight.shape}")
    out_f, in_f = weight.shape
    if x.shape[-1] != in_f:
        raise DimensionError(f"linear: input features {x.shape[-1]} != weight in-features {in_f}")
    if bias is not None and bias.shape != (out_f,):
        raise DimensionError(f"linear: bias shape {bias.shape} != ({out_f},)")
    xshape = x.shape
    x2 = x.data.reshape(-1, in_f)
    wd = weight.data
    y = x2 @ wd.T
    if bias is not None:
        y = y + bias.data
    record_macs("linear", x2.shape[0] * in_f * out_f)
    out = Tensor.wrap(y.reshape(xshape[:-1] + (out_f,)))

    def backward(g):
        g2 = g.reshape(-1, out_f)
        grads = [(g2 @ wd).reshape(xshape), g2.T @ x2]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record("linear", inputs, out, backward)


# ── Normalization ────────────────────────────────────────────────────────

@dataclass
class NormParams:
    gamma: Tensor
    beta: Tensor
    eps: float = 1e-5
    kind: str = "layer_norm"
    running_mean: Optional[Tensor] = None
    running_var: Optional[Tensor] = None
    momentum: float = 0.1

    def __post_init__(self):
        if self.eps <= 0:
            raise ContractError(f"norm epsilon must be positive, got {self.eps}")
        if self.kind not in ("layer_norm", "batch_norm"):
            raise ContractError(f"unknown norm kind {self.kind!r}")


def layer_norm(x: Tensor, p: NormParams) -> Tensor:
    """Normalize over the last axis (population variance), then γ·x̂ + β."""
    _check_dtypes("layer_norm", x, p.gamma, p.beta)
    C = p.gamma.shape[0]
    if x.shape[-1] != C or p.beta.shape != (C,):
        raise DimensionError(f"layer_norm: last axis {x.shape[-1]} != normalized size {C}")
    xd, gamma = x.data, p.gamma.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + p.eps)
    xhat = xc * inv
    out = Tensor.wrap(xhat * gamma + p.beta.data)

    def backward(g):
        dxhat = g * gamma
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).reshape(-1, C).sum(axis=0), g.reshape(-1, C).sum(axis=0)

    return record("layer_norm", (x, p.gamma, p.beta), out, backward)


def batch_norm(x: Tensor, p: NormParams, training: bool) -> Tensor:
    """
    Per-channel normalization of B×C×H×W. Training uses batch statistics and
    moves the running statistics toward them (running variance is unbiased);
    eval uses the running statistics.
    """
    _check_dtypes("batch_norm", x, p.gamma, p.beta)
    if x.ndim != 4:
        raise DimensionError(f"batch_norm expects B×C×H×W, got {x.shape}")
    B, C, H, W = x.shape
    if B == 0:
        raise ContractError("batch_norm on an empty batch")
    if p.gamma.shape != (C,) or p.beta.shape != (C,):
        raise DimensionError(f"batch_norm: {C} channels but gamma {p.gamma.shape}")
    axes = (0, 2, 3)
    xd = x.data
    gamma = p.gamma.data.reshape(1, C, 1, 1)

    if training:
        mu = xd.mean(axis=axes, keepdims=True)
        xc = xd - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        if p.running_mean is not None and p.running_var is not None:
            n = B * H * W
            m = p.momentum
            unbiased = var * (n / (n - 1)) if n > 1 else var
            p.running_mean.assign((1 - m) * p.running_mean.data + m * mu.reshape(C))
            p.running_var.assign((1 - m) * p.running_var.data + m * unbiased.reshape(C))
        inv = 1.0 / np.sqrt(var + p.eps)
        xhat = xc * inv
    else:
        if p.running_mean is None or p.running_var is None:
            raise ContractError("batch_norm in eval mode needs running statistics")
        inv = 1.0 / np.sqrt(p.running_var.data.reshape(1, C, 1, 1) + p.eps)
        xhat = (xd - p.running_mean.data.reshape(1, C, 1, 1)) * inv
    out = Tensor.wrap(xhat * gamma + p.beta.data.reshape(1, C, 1, 1))

    def backward(g):
        dxhat = g * gamma
        if training:
            dx = inv * (dxhat - dxhat.mean(axis=axes, keepdims=True) - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True))
        else:
            dx = dxhat * inv
        return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return record("batch_norm", (x, p.gamma, p.beta), out, backward)


# ── Pooling ──────────────────────────────────────────────────────────────

def avg_pool2d(x: Tensor, k: int, stride: Optional[int] = None) -> Tensor:
    stride = k if stride is None else stride
    if k != stride:
        raise ContractError(f"avg_pool2d supports kernel == stride only (got {k}, {stride})")
    if x.ndim != 4:
        raise DimensionError(f"avg_pool2d expects B×C×H×W, got {x.shape}")
    B, C, H, W = x.shape
    if H % k or W % k:
        raise DimensionError(f"avg_pool2d: {H}×{W} is not divisible by {k}")
    if k == 1:
        return x
    out = Tensor.wrap(x.data.reshape(B, C, H // k, k, W // k, k).mean(axis=(3, 5)))
    area = float(k * k)

    def backward(g):
        expanded = np.broadcast_to(g[:, :, :, None, :, None], (B, C, H // k, k, W // k, k))
        return ((expanded / g.dtype.type(area)).reshape(B, C, H, W),)

    return record("avg_pool2d", (x,), out, backward)


def adaptive_bins(size: int, g: int) -> Tuple[Tuple[int, int], ...]:
    """Bin i covers [floor(i·size/g), ceil((i+1)·size/g))."""
    return tuple(((i * size) // g, -(-((i + 1) * size) // g)) for i in range(g))


def adaptive_avg_pool2d(x: Tensor, g: int) -> Tensor:
    """Average-pool B×C×H×W down (or up) to B×C×g×g."""
    if x.ndim != 4:
        raise DimensionError(f"adaptive_avg_pool2d expects B×C×H×W, got {x.shape}")
    if g < 1:
        raise ContractError(f"adaptive_avg_pool2d target must be >= 1, got {g}")
    B, C, H, W = x.shape
    if H == g and W == g:
        return x
    if H % g == 0 and W % g == 0 and H == W:
        return avg_pool2d(x, H // g)
    hb, wb = adaptive_bins(H, g), adaptive_bins(W, g)
    xd = x.data
    y = np.empty((B, C, g, g), dtype=xd.dtype)
    for i, (h0, h1) in enumerate(hb):
        for j, (w0, w1) in enumerate(wb):
            y[:, :, i, j] = xd[:, :, h0:h1, w0:w1].mean(axis=(2, 3))
    out = Tensor.wrap(y)

    def backward(gr):
        gx = np.zeros((B, C, H, W), dtype=gr.dtype)
        for i, (h0, h1) in enumerate(hb):
            for j, (w0, w1) in enumerate(wb):
                area = (h1 - h0) * (w1 - w0)
                gx[:, :, h0:h1, w0:w1] += (gr[:, :, i, j] / area)[:, :, None, None]
        return (gx,)

    return record("adaptive_avg_pool2d", (x,), out, backward)


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool expects B×C×H×W, got {x.shape}")
    return ops.mean(x, axis=(2, 3))


# ── Dropout ──────────────────────────────────────────────────────────────

def dropout(x: Tensor, p: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1−p); eval mode is the identity."""
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ContractError("training-mode dropout needs a random generator")
    keep = (rng.random(x.shape) >= p).astype(x.dtype)
    keep *= keep.dtype.type(1.0 / (1.0 - p))
    out = Tensor.wrap(x.data * keep)
    return record("dropout", (x,), out, lambda g: (g * keep,))


# ── Modules ──────────────────────────────────────────────────────────────

class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, groups: int = 1, bias: bool = True):
        super().__init__()
        if groups < 1 or in_ch % groups or out_ch % groups:
            raise DimensionError(f"Conv2d: {in_ch}→{out_ch} channels not divisible by groups={groups}")
        self.stride, self.padding, self.groups = stride, padding, groups
        self.add_param("weight", init.he_normal(rng, (out_ch, in_ch // groups, kernel, kernel)))
        if bias:
            self.add_param("bias", init.zeros((out_ch,)))
        else:
            self.bias = None

    def params(self) -> Conv2dParams:
        return Conv2dParams(self.weight, self.bias, self.stride, self.padding, self.groups)

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.params())


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.add_param("weight", init.trunc_normal(rng, (out_features, in_features)))
        if bias:
            self.add_param("bias", init.zeros((out_features,)))
        else:
            self.bias = None

    def forward(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.add_param("gamma", init.ones((dim,)))
        self.add_param("beta", init.zeros((dim,)))

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, NormParams(self.gamma, self.beta, self.eps, "layer_norm"))


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.add_param("gamma", init.ones((channels,)))
        self.add_param("beta", init.zeros((channels,)))
        self.add_buffer("running_mean", init.zeros((channels,)))
        self.add_buffer("running_var", init.ones((channels,)))

    def params(self) -> NormParams:
        return NormParams(self.gamma, self.beta, self.eps, "batch_norm",
                          self.running_mean, self.running_var, self.momentum)

    def forward(self, x: Tensor) -> Tensor:
        return batch_norm(x, self.params(), self.training)


class Dropout(Module):
    def __init__(self, p: float, rng: Optional[np.random.Generator] = None):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ContractError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p
        self.rng = rng

    def forward(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        return dropout(x, self.p, self.training, rng if rng is not None else self.rng)
