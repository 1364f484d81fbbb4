"""
Dense (local-feature) branch.

stem conv → [dense block → transition] × (n−1) → dense block → BN → ReLU

Inside a block, layer l sees the channel concatenation of the block input and
every earlier layer's k new maps, i.e. k0 + k·(l−1) channels. Each block
keeps the layer-to-layer concat edges as a networkx DiGraph so the wiring can
be audited: node 0 is the block input, node l the output of layer l.
"""

from dataclasses import dataclass
from typing import List, Tuple

import networkx as nx
import numpy as np

from src.core.config import DenseSection
from src.core.errors import ConfigError, DimensionError
from src.nn.layers import BatchNorm2d, Conv2d, avg_pool2d, conv_output_size
from src.nn.module import Module, ModuleList
from src.tensor import ops
from src.tensor.tensor import Tensor

CONNECTIVITY = ("dense", "plain")


@dataclass
class DenseBlockConfig:
    k0: int
    k: int
    L: int
    bottleneck: bool = False
    bottleneck_width: int = 4

    @property
    def out_channels(self) -> int:
        return self.k0 + self.k * self.L

    def layer_in_channels(self, l: int) -> int:
        """Input channels of layer l (1-based)."""
        return self.k0 + self.k * (l - 1)


@dataclass
class TransitionConfig:
    in_channels: int
    compression: float = 0.5

    @property
    def out_channels(self) -> int:
        return int(np.floor(self.compression * self.in_channels))


class DenseLayer(Module):
    """BN → ReLU → [1×1 bottleneck → BN → ReLU] → 3×3 conv producing k maps."""

    def __init__(self, in_channels: int, k: int, rng: np.random.Generator, bottleneck: bool = False,
                 bottleneck_width: int = 4, momentum: float = 0.1, eps: float = 1e-5, concat: bool = True):
        super().__init__()
        self.in_channels, self.k, self.concat = in_channels, k, concat
        self.norm = BatchNorm2d(in_channels, momentum, eps)
        if bottleneck:
            inner = bottleneck_width * k
            self.reduce = Conv2d(in_channels, inner, 1, rng, bias=False)
            self.reduce_norm = BatchNorm2d(inner, momentum, eps)
        else:
            inner = in_channels
            self.reduce = None
        self.conv = Conv2d(inner, k, 3, rng, padding=1, bias=False)

    def new_features(self, x: Tensor) -> Tensor:
        h = ops.relu(self.norm(x))
        if self.reduce is not None:
            h = ops.relu(self.reduce_norm(self.reduce(h)))
        return self.conv(h)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.in_channels:
            raise DimensionError(f"dense layer expects {self.in_channels} channels, got {x.shape[1]}")
        new = self.new_features(x)
        return ops.concat([x, new], axis=1) if self.concat else new


class DenseBlock(Module):
    def __init__(self, cfg: DenseBlockConfig, rng: np.random.Generator, momentum: float = 0.1,
                 eps: float = 1e-5, connectivity: str = "dense"):
        super().__init__()
        if connectivity not in CONNECTIVITY:
            raise ConfigError(f"unknown connectivity {connectivity!r}", "connectivity")
        self.cfg = cfg
        self.connectivity = connectivity
        dense = connectivity == "dense"
        self.layers = ModuleList([
            DenseLayer(cfg.layer_in_channels(l) if dense else (cfg.k0 if l == 1 else cfg.k), cfg.k, rng,
                       cfg.bottleneck, cfg.bottleneck_width, momentum, eps, concat=dense)
            for l in range(1, cfg.L + 1)
        ])
        self.graph = self._build_graph()
        self.layer_inputs: List[int] = []

    def _build_graph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_node(0, channels=self.cfg.k0)
        for l in range(1, self.cfg.L + 1):
            g.add_node(l, channels=self.cfg.k)
            sources = range(l) if self.connectivity == "dense" else [l - 1]
            for j in sources:
                g.add_edge(j, l)
        return g

    @property
    def out_channels(self) -> int:
        return self.cfg.out_channels if self.connectivity == "dense" else self.cfg.k

    @property
    def edge_count(self) -> int:
        return self.graph.number_of_edges()

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.cfg.k0:
            raise DimensionError(f"dense block expects {self.cfg.k0} input channels, got {x.shape[1]}")
        self.layer_inputs = []
        for layer in self.layers:
            self.layer_inputs.append(x.shape[1])
            x = layer(x)
        return x


class Transition(Module):
    """BN → 1×1 conv to ⌊θC⌋ → 2×2 average pool, stride 2."""

    def __init__(self, cfg: TransitionConfig, rng: np.random.Generator, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        if cfg.out_channels < 1:
            raise ConfigError(f"compression {cfg.compression} leaves no channels from {cfg.in_channels}",
                              "model.dense.compression")
        self.cfg = cfg
        self.norm = BatchNorm2d(cfg.in_channels, momentum, eps)
        self.conv = Conv2d(cfg.in_channels, cfg.out_channels, 1, rng, bias=False)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[2] % 2 or x.shape[3] % 2:
            raise DimensionError(f"transition needs even spatial extents, got {x.shape[2]}×{x.shape[3]}")
        return avg_pool2d(self.conv(self.norm(x)), 2)


class DenseBranch(Module):
    def __init__(self, cfg: DenseSection, rng: np.random.Generator, in_channels: int = 3,
                 connectivity: str = "dense"):
        super().__init__()
        self.cfg = cfg
        mom, eps = cfg.bn_momentum, cfg.bn_eps
        self.stem = Conv2d(in_channels, cfg.stem_channels, cfg.stem_kernel, rng,
                           stride=cfg.stem_stride, padding=cfg.stem_kernel // 2, bias=False)
        self.stem_norm = BatchNorm2d(cfg.stem_channels, mom, eps)

        self.blocks = ModuleList()
        self.transitions = ModuleList()
        channels = cfg.stem_channels
        for i, L in enumerate(cfg.block_layers):
            block = DenseBlock(DenseBlockConfig(channels, cfg.growth_rate, L, cfg.bottleneck, cfg.bottleneck_width),
                               rng, mom, eps, connectivity)
            self.blocks.append(block)
            channels = block.out_channels
            if i < len(cfg.block_layers) - 1:
                trans = Transition(TransitionConfig(channels, cfg.compression), rng, mom, eps)
                self.transitions.append(trans)
                channels = trans.cfg.out_channels
        self.final_norm = BatchNorm2d(channels, mom, eps)
        self.out_channels = channels

    def infer_shape(self, H: int, W: int) -> Tuple[int, int, int]:
        """Output (C, H, W) from the config alone, without running any kernel."""
        return self.shape_trace(H, W)[-1][1]

    def shape_trace(self, H: int, W: int) -> List[Tuple[str, Tuple[int, int, int]]]:
        c = self.cfg
        H = conv_output_size(H, c.stem_kernel, c.stem_stride, c.stem_kernel // 2)
        W = conv_output_size(W, c.stem_kernel, c.stem_stride, c.stem_kernel // 2)
        if c.stem_pool:
            H, W = H // c.stem_pool, W // c.stem_pool
        trace = [("stem", (c.stem_channels, H, W))]
        for i, block in enumerate(self.blocks):
            trace.append((f"block{i + 1}", (block.out_channels, H, W)))
            if i < len(self.transitions):
                H, W = H // 2, W // 2
                trace.append((f"transition{i + 1}", (self.transitions[i].cfg.out_channels, H, W)))
        return trace

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4:
            raise DimensionError(f"dense branch expects B×C×H×W, got {x.shape}")
        h = ops.relu(self.stem_norm(self.stem(x)))
        if self.cfg.stem_pool:
            h = avg_pool2d(h, self.cfg.stem_pool)
        for i, block in enumerate(self.blocks):
            h = block(h)
            if i < len(self.transitions):
                h = self.transitions[i](h)
        return ops.relu(self.final_norm(h))
