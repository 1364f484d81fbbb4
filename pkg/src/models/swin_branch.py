"""
Swin (global-context) branch.

    image B×3×H×W
      → patch partition (4×4 patches, 48 values each) → linear embed + LN
      → stage 1 … stage 4, patch merging in front of stages 2–4
      → LN → B×8C×H/32×W/32

Each stage alternates W-MSA and SW-MSA blocks (pre-norm residuals). SW-MSA is
a cyclic shift by −⌊M/2⌋, windowed attention with an additive mask that blocks
token pairs from different pre-shift regions, and the inverse shift.
Token maps inside the branch are B×H×W×C.
"""

import math
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterator, List, Optional, Tuple, Union

import numpy as np

from src.core.config import SwinSection
from src.core.errors import ContractError, DimensionError
from src.nn import init
from src.nn.layers import LayerNorm, Linear, linear
from src.nn.module import Module, ModuleList
from src.nn.profiling import MacCounter, count_macs, record_macs
from src.tensor import ops
from src.tensor.tensor import Tensor

MASK_VALUE = -1e9

AttentionMask = np.ndarray  # nW × M² × M², entries 0 or MASK_VALUE


# ── Patches and windows ──────────────────────────────────────────────────

def patch_partition(x: Tensor, patch: int = 4) -> Tensor:
    """B×C×H×W → B×(H/p·W/p)×(p·p·C). Tokens row-major; each token laid out as (ph, pw, c)."""
    if x.ndim != 4:
        raise DimensionError(f"patch_partition expects B×C×H×W, got {x.shape}")
    B, C, H, W = x.shape
    if H % patch or W % patch:
        raise DimensionError(f"patch_partition: {H}×{W} is not divisible by patch size {patch}")
    h, w = H // patch, W // patch
    t = ops.reshape(x, (B, C, h, patch, w, patch))
    t = ops.permute(t, (0, 2, 4, 3, 5, 1))
    return ops.reshape(t, (B, h * w, patch * patch * C))


def patch_unpartition(tokens: Tensor, H: int, W: int, patch: int = 4, channels: int = 3) -> Tensor:
    B, T, D = tokens.shape
    h, w = H // patch, W // patch
    if T != h * w or D != patch * patch * channels:
        raise DimensionError(f"patch_unpartition: tokens {tokens.shape} do not tile a {channels}×{H}×{W} image")
    t = ops.reshape(tokens, (B, h, w, patch, patch, channels))
    t = ops.permute(t, (0, 5, 1, 3, 2, 4))
    return ops.reshape(t, (B, channels, H, W))


def window_partition(x: Tensor, M: int) -> Tensor:
    """B×H×W×d → (B·nW)×M²×d, windows row-major within each image."""
    B, H, W, d = x.shape
    if H % M or W % M:
        raise DimensionError(f"window_partition: {H}×{W} map is not divisible by window {M}")
    t = ops.reshape(x, (B, H // M, M, W // M, M, d))
    t = ops.permute(t, (0, 1, 3, 2, 4, 5))
    return ops.reshape(t, (B * (H // M) * (W // M), M * M, d))


def window_reverse(windows: Tensor, M: int, H: int, W: int) -> Tensor:
    N, T, d = windows.shape
    nW = (H // M) * (W // M)
    if T != M * M or N % nW:
        raise DimensionError(f"window_reverse: {windows.shape} does not tile a {H}×{W} map with window {M}")
    B = N // nW
    t = ops.reshape(windows, (B, H // M, W // M, M, M, d))
    t = ops.permute(t, (0, 1, 3, 2, 4, 5))
    return ops.reshape(t, (B, H, W, d))


def relative_position_index(M: int) -> np.ndarray:
    """M²×M² index into the (2M−1)² bias table by relative (dy, dx)."""
    coords = np.stack(np.meshgrid(np.arange(M), np.arange(M), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (M - 1)
    return rel[0] * (2 * M - 1) + rel[1]


def build_shift_mask(H: int, W: int, M: int, s: int) -> AttentionMask:
    """
    Additive mask for the shifted windows of an H×W map. Tokens are labelled
    by the 3×3 region grid they came from before the shift; mask[w, i, j] is 0
    iff tokens i and j of window w share a label.
    """
    if H % M or W % M:
        raise DimensionError(f"build_shift_mask: {H}×{W} map is not divisible by window {M}")
    nW = (H // M) * (W // M)
    if s == 0:
        return np.zeros((nW, M * M, M * M))
    if s != M // 2:
        raise ContractError(f"shift must be 0 or M//2 = {M // 2}, got {s}")
    labels = np.zeros((H, W), dtype=np.int64)
    region = 0
    for hs in (slice(0, H - M), slice(H - M, H - s), slice(H - s, H)):
        for ws in (slice(0, W - M), slice(W - M, W - s), slice(W - s, W)):
            labels[hs, ws] = region
            region += 1
    win = labels.reshape(H // M, M, W // M, M).transpose(0, 2, 1, 3).reshape(nW, M * M)
    same = win[:, :, None] == win[:, None, :]
    return np.where(same, 0.0, MASK_VALUE)


# ── Attention ────────────────────────────────────────────────────────────

@dataclass
class AttentionParams:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    num_heads: int
    bias_table: Optional[Tensor] = None  # (2M−1)² × heads
    bias_index: Optional[np.ndarray] = None  # T × T

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]


def mhsa(tokens: Tensor, p: AttentionParams, mask: Optional[AttentionMask] = None,
         return_attention: bool = False) -> Union[Tensor, Tuple[Tensor, Tensor]]:
    """Per head softmax(QKᵀ/√d_k + bias + mask)·V; heads concatenated, then W_o."""
    if tokens.ndim != 3:
        raise DimensionError(f"mhsa expects N×T×d tokens, got {tokens.shape}")
    N, T, d = tokens.shape
    h = p.num_heads
    if d != p.dim:
        raise DimensionError(f"mhsa: token dim {d} != attention dim {p.dim}")
    if d % h:
        raise DimensionError(f"mhsa: dim {d} is not divisible by {h} heads")
    dk = d // h

    def heads(t: Tensor) -> Tensor:
        return ops.permute(ops.reshape(t, (N, T, h, dk)), (0, 2, 1, 3))

    q = heads(linear(tokens, p.w_q))
    k = heads(linear(tokens, p.w_k))
    v = heads(linear(tokens, p.w_v))
    scores = ops.scale(ops.matmul(q, ops.permute(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dk))

    if p.bias_table is not None:
        if p.bias_index is None or p.bias_index.shape != (T, T):
            raise DimensionError(f"relative position index does not match {T} tokens")
        bias = ops.take(p.bias_table, p.bias_index.reshape(-1), axis=0)
        bias = ops.reshape(ops.permute(ops.reshape(bias, (T, T, h)), (2, 0, 1)), (1, h, T, T))
        scores = ops.add(scores, ops.broadcast_to(bias, (N, h, T, T)))

    if mask is not None:
        nW = mask.shape[0]
        if mask.shape[1:] != (T, T) or N % nW:
            raise DimensionError(f"mask {mask.shape} does not match {N} windows of {T} tokens")
        tiled = np.broadcast_to(np.tile(mask, (N // nW, 1, 1))[:, None], (N, h, T, T))
        scores = ops.add(scores, Tensor(tiled, dtype=tokens.dtype))

    attn = ops.softmax(scores, axis=-1)
    out = ops.reshape(ops.permute(ops.matmul(attn, v), (0, 2, 1, 3)), (N, T, d))
    record_macs("attention", 2 * N * T * T * d, calls=N)
    out = linear(out, p.w_o)
    return (out, attn) if return_attention else out


def w_msa(x: Tensor, p: AttentionParams, M: int, mask: Optional[AttentionMask] = None) -> Tensor:
    """Attention inside each M×M window of a B×H×W×d map; no cross-window mixing."""
    if x.ndim != 4:
        raise DimensionError(f"w_msa expects B×H×W×d, got {x.shape}")
    _, H, W, _ = x.shape
    out = mhsa(window_partition(x, M), p, mask)
    return window_reverse(out, M, H, W)


def sw_msa(x: Tensor, p: AttentionParams, M: int, s: Optional[int] = None) -> Tensor:
    """Shift by (−s, −s), masked W-MSA, shift back. s defaults to ⌊M/2⌋; s = 0 is plain W-MSA."""
    s = M // 2 if s is None else s
    if s == 0:
        return w_msa(x, p, M)
    _, H, W, _ = x.shape
    mask = build_shift_mask(H, W, M, s)
    shifted = ops.cyclic_shift(x, -s, -s)
    return ops.cyclic_shift(w_msa(shifted, p, M, mask), s, s)


@contextmanager
def attention_counter() -> Iterator[MacCounter]:
    """Counts attention windows (`calls["attention"]`) and MACs (`by_kind["attention"]`)."""
    with count_macs() as counter:
        yield counter


class WindowAttention(Module):
    def __init__(self, dim: int, num_heads: int, window: int, rng: np.random.Generator,
                 relative_position_bias: bool = True):
        super().__init__()
        if dim % num_heads:
            raise DimensionError(f"attention dim {dim} is not divisible by {num_heads} heads")
        self.dim, self.num_heads, self.window = dim, num_heads, window
        for name in ("w_q", "w_k", "w_v", "w_o"):
            self.add_param(name, init.trunc_normal(rng, (dim, dim)))
        if relative_position_bias:
            self.add_param("bias_table", init.trunc_normal(rng, ((2 * window - 1) ** 2, num_heads)))
            self.bias_index = relative_position_index(window)
        else:
            self.bias_table = None
            self.bias_index = None

    def params(self) -> AttentionParams:
        return AttentionParams(self.w_q, self.w_k, self.w_v, self.w_o, self.num_heads,
                               self.bias_table, self.bias_index)

    def forward(self, x: Tensor, shift: int = 0) -> Tensor:
        return sw_msa(x, self.params(), self.window, shift)


# ── Blocks and stages ────────────────────────────────────────────────────

class SwinBlock(Module):
    """x + attn(LN(x)); x + MLP(LN(x)). shift 0 gives W-MSA, shift M//2 gives SW-MSA."""

    def __init__(self, dim: int, num_heads: int, window: int, shift: int, rng: np.random.Generator,
                 mlp_ratio: float = 4.0, relative_position_bias: bool = True, eps: float = 1e-5):
        super().__init__()
        self.shift = shift
        self.norm1 = LayerNorm(dim, eps)
        self.attn = WindowAttention(dim, num_heads, window, rng, relative_position_bias)
        self.norm2 = LayerNorm(dim, eps)
        hidden = int(dim * mlp_ratio)
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        x = ops.add(x, self.attn(self.norm1(x), self.shift))
        return ops.add(x, self.fc2(ops.gelu(self.fc1(self.norm2(x)))))


class PatchMerging(Module):
    """2×2 neighbours concatenated as (top-left, top-right, bottom-left, bottom-right), then 4d→2d."""

    def __init__(self, dim: int, rng: np.random.Generator):
        super().__init__()
        self.reduction = Linear(4 * dim, 2 * dim, rng, bias=False)

    def forward(self, x: Tensor) -> Tensor:
        B, H, W, d = x.shape
        if H % 2 or W % 2:
            raise DimensionError(f"patch_merging needs even extents, got {H}×{W}")
        t = ops.reshape(x, (B, H // 2, 2, W // 2, 2, d))
        t = ops.permute(t, (0, 1, 3, 2, 4, 5))
        return self.reduction(ops.reshape(t, (B, H // 2, W // 2, 4 * d)))


def effective_window(resolution: int, window: int) -> Tuple[int, int]:
    """(window, shift) for a stage map: maps no larger than the window get one unshifted window."""
    if resolution <= window:
        return resolution, 0
    return window, window // 2


class SwinStage(Module):
    def __init__(self, dim: int, depth: int, num_heads: int, resolution: int, cfg: SwinSection,
                 rng: np.random.Generator, downsample: bool):
        super().__init__()
        self.merge = PatchMerging(dim // 2, rng) if downsample else None
        M, s = effective_window(resolution, cfg.window_size)
        self.window, self.shift = M, s
        self.blocks = ModuleList([
            SwinBlock(dim, num_heads, M, 0 if i % 2 == 0 else s, rng,
                      cfg.mlp_ratio, cfg.relative_position_bias, cfg.ln_eps)
            for i in range(depth)
        ])

    def forward(self, x: Tensor) -> Tensor:
        if self.merge is not None:
            x = self.merge(x)
        for block in self.blocks:
            x = block(x)
        return x


class SwinBranch(Module):
    def __init__(self, cfg: SwinSection, input_size: int, rng: np.random.Generator, in_channels: int = 3):
        super().__init__()
        self.cfg = cfg
        self.input_size = input_size
        p, C = cfg.patch_size, cfg.embed_dim
        self.embed = Linear(p * p * in_channels, C, rng)
        self.embed_norm = LayerNorm(C, cfg.ln_eps)
        self.stages = ModuleList()
        res = input_size // p
        for s, (depth, heads) in enumerate(zip(cfg.depths, cfg.num_heads)):
            if s > 0:
                res //= 2
            self.stages.append(SwinStage(C * 2 ** s, depth, heads, res, cfg, rng, downsample=s > 0))
        self.out_channels = C * 2 ** (len(cfg.depths) - 1)
        self.final_norm = LayerNorm(self.out_channels, cfg.ln_eps)
        self.stage_shapes: List[Tuple[int, int, int]] = []

    def shape_trace(self, H: int, W: int) -> List[Tuple[str, Tuple[int, int, int]]]:
        """(name, (channels, h, w)) after patch embedding and after every stage."""
        p, C = self.cfg.patch_size, self.cfg.embed_dim
        h, w = H // p, W // p
        trace = [("patch_embed", (C, h, w))]
        for s in range(len(self.cfg.depths)):
            if s > 0:
                h, w = h // 2, w // 2
            trace.append((f"stage{s + 1}", (C * 2 ** s, h, w)))
        return trace

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4:
            raise DimensionError(f"swin branch expects B×C×H×W, got {x.shape}")
        B, _, H, W = x.shape
        p = self.cfg.patch_size
        tokens = self.embed_norm(self.embed(patch_partition(x, p)))
        t = ops.reshape(tokens, (B, H // p, W // p, self.cfg.embed_dim))
        self.stage_shapes = []
        for stage in self.stages:
            t = stage(t)
            self.stage_shapes.append((t.shape[3], t.shape[1], t.shape[2]))
        t = self.final_norm(t)
        return ops.permute(t, (0, 3, 1, 2))
