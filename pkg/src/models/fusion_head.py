"""
Fusion head: multi-scale attention refinement of each branch, channel-squeeze
gating, and the fused classifier.

MAB (two gated residuals, LN over channels at every location):
    N₁ = LN(X);  X ← X + λ₁ · f₃(MLKA(f₁(N₁)) ⊗ f₂(N₁))
    N₂ = LN(X);  X ← X + λ₂ · f₆(GSAU(f₄(N₂), f₅(N₂)))

MLKA(a) = (Σₖ dwₖ(a) ⊗ gateₖ(a)) ⊗ proj(a)  for k in mlka_kernels
GSAU(a, b) = out(dw₃(a) ⊗ b)

λ₁ = λ₂ = 0 at init, so every MAB starts as the identity.
"""

from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from src.core.config import AblationConfig, FusionSection
from src.core.errors import ConfigError, DimensionError
from src.nn.layers import Conv2d, Dropout, LayerNorm, Linear, adaptive_avg_pool2d, global_avg_pool
from src.nn.module import Module, ModuleList
from src.tensor import ops
from src.tensor.tensor import Tensor


class ChannelLayerNorm(Module):
    """LayerNorm over C of a B×C×H×W map, independently at every spatial location."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.norm = LayerNorm(channels, eps)

    def forward(self, x: Tensor) -> Tensor:
        return ops.permute(self.norm(ops.permute(x, (0, 2, 3, 1))), (0, 3, 1, 2))


def pointwise(channels: int, rng: np.random.Generator, bias: bool = True) -> Conv2d:
    return Conv2d(channels, channels, 1, rng, bias=bias)


class MLKA(Module):
    def __init__(self, channels: int, rng: np.random.Generator, kernels: Sequence[int] = (3, 5, 7)):
        super().__init__()
        self.kernels = tuple(kernels)
        self.proj = pointwise(channels, rng)
        self.spatial = ModuleList([Conv2d(channels, channels, k, rng, padding=k // 2, groups=channels)
                                   for k in self.kernels])
        self.gates = ModuleList([pointwise(channels, rng, bias=False) for _ in self.kernels])

    def attention_map(self, a: Tensor) -> Tensor:
        attn = None
        for dw, gate in zip(self.spatial, self.gates):
            term = ops.mul(dw(a), gate(a))
            attn = term if attn is None else ops.add(attn, term)
        return attn

    def forward(self, a: Tensor) -> Tensor:
        return ops.mul(self.attention_map(a), self.proj(a))


class GSAU(Module):
    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        self.gate = Conv2d(channels, channels, 3, rng, padding=1, groups=channels, bias=False)
        self.out = pointwise(channels, rng)

    def forward(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise DimensionError(f"gsau inputs differ in shape: {a.shape} vs {b.shape}")
        return self.out(ops.mul(self.gate(a), b))


class MAB(Module):
    def __init__(self, channels: int, cfg: FusionSection, rng: np.random.Generator, eps: float = 1e-5):
        super().__init__()
        self.norm1 = ChannelLayerNorm(channels, eps)
        self.f1 = pointwise(channels, rng)
        self.f2 = pointwise(channels, rng)
        self.f3 = pointwise(channels, rng)
        self.mlka = MLKA(channels, rng, cfg.mlka_kernels)
        self.norm2 = ChannelLayerNorm(channels, eps)
        self.f4 = pointwise(channels, rng)
        self.f5 = pointwise(channels, rng)
        self.f6 = pointwise(channels, rng)
        self.gsau = GSAU(channels, rng)
        self.add_param("lambda1", np.full((1,), cfg.lambda_init))
        self.add_param("lambda2", np.full((1,), cfg.lambda_init))

    def forward(self, x: Tensor) -> Tensor:
        n1 = self.norm1(x)
        x = ops.add(x, ops.scale_by(self.lambda1, self.f3(ops.mul(self.mlka(self.f1(n1)), self.f2(n1)))))
        n2 = self.norm2(x)
        return ops.add(x, ops.scale_by(self.lambda2, self.f6(self.gsau(self.f4(n2), self.f5(n2)))))


class RefineBranches(Module):
    """Independent MABs for the dense and the swin feature maps."""

    def __init__(self, dense_channels: int, swin_channels: int, cfg: FusionSection, rng: np.random.Generator):
        super().__init__()
        self.dense = MAB(dense_channels, cfg, rng) if dense_channels else None
        self.swin = MAB(swin_channels, cfg, rng)

    def forward(self, f_d: Optional[Tensor], f_t: Tensor) -> Tuple[Optional[Tensor], Tensor]:
        return (self.dense(f_d) if f_d is not None and self.dense is not None else f_d), self.swin(f_t)


class ChannelSqueeze(Module):
    """gate = sigmoid(W₂·relu(W₁·GAP(x))); output channel c is x[:, c] · gate_c."""

    def __init__(self, channels: int, ratio: int, rng: np.random.Generator):
        super().__init__()
        if ratio < 1 or channels % ratio:
            raise ConfigError(f"{channels} channels are not divisible by squeeze ratio {ratio}",
                              "model.fusion.squeeze_ratio")
        self.fc1 = Linear(channels, channels // ratio, rng)
        self.fc2 = Linear(channels // ratio, channels, rng)

    def gate(self, x: Tensor) -> Tensor:
        return ops.sigmoid(self.fc2(ops.relu(self.fc1(global_avg_pool(x)))))

    def forward(self, x: Tensor) -> Tensor:
        B, C = x.shape[:2]
        g = ops.reshape(self.gate(x), (B, C, 1, 1))
        return ops.mul(x, ops.broadcast_to(g, x.shape))


class FusionHead(Module):
    """
    [squeeze] → adaptive pool to g×g → concat(dense, swin) → 1×1 conv to F → GAP
    → dropout → linear F→K. The post-GAP vector is the exported feature.
    """

    def __init__(self, dense_channels: int, swin_channels: int, cfg: FusionSection, num_classes: int,
                 rng: np.random.Generator, ablation: Optional[AblationConfig] = None):
        super().__init__()
        ablation = ablation or AblationConfig()
        self.cfg = cfg
        self.use_squeeze = not ablation.disable_squeeze
        self.dense_channels = dense_channels
        if self.use_squeeze:
            self.squeeze_dense = ChannelSqueeze(dense_channels, cfg.squeeze_ratio, rng) if dense_channels else None
            self.squeeze_swin = ChannelSqueeze(swin_channels, cfg.squeeze_ratio, rng)
        self.fuse = Conv2d(dense_channels + swin_channels, cfg.fused_dim, 1, rng)
        self.dropout = Dropout(cfg.dropout, np.random.default_rng(rng.integers(2 ** 32)))
        self.classifier = Linear(cfg.fused_dim, num_classes, rng)

    def fused_features(self, f_d: Optional[Tensor], f_t: Tensor) -> Tensor:
        parts: List[Tensor] = []
        if f_d is not None:
            if f_d.shape[1] != self.dense_channels:
                raise DimensionError(f"fusion head expects {self.dense_channels} dense channels, got {f_d.shape[1]}")
            h = self.squeeze_dense(f_d) if self.use_squeeze and self.squeeze_dense is not None else f_d
            parts.append(adaptive_avg_pool2d(h, self.cfg.grid))
        elif self.dense_channels:
            raise DimensionError("fusion head was built for a dense branch but got no dense features")
        h = self.squeeze_swin(f_t) if self.use_squeeze else f_t
        parts.append(adaptive_avg_pool2d(h, self.cfg.grid))
        return global_avg_pool(self.fuse(ops.concat(parts, axis=1)))

    def forward(self, f_d: Optional[Tensor], f_t: Tensor, rng: Optional[np.random.Generator] = None,
                return_features: bool = False) -> Union[Tensor, Tuple[Tensor, Tensor]]:
        feats = self.fused_features(f_d, f_t)
        logits = self.classifier(self.dropout(feats, rng))
        return (logits, feats) if return_features else logits
