"""
HybridModel, the dual-branch classifier.

    x ─┬─ DenseBranch ─┐
       └─ SwinBranch ──┴─ RefineBranches (MAB ×2) ─ FusionHead ─ logits

The ablation toggles drop the dense branch, the MABs or the channel squeeze;
the four named variants in src.core.config.VARIANTS are combinations of them.
Parameters are drawn from one Generator in build order, so a (config, seed)
pair fixes every initial weight.
"""

import logging
from typing import List, Optional, Tuple, Union

import numpy as np

from src.core.config import RunConfig
from src.core.errors import DimensionError
from src.models.dense_branch import DenseBranch
from src.models.fusion_head import FusionHead, RefineBranches
from src.models.swin_branch import SwinBranch
from src.nn.module import Module
from src.tensor.tensor import Tensor

logger = logging.getLogger(__name__)

ShapeTrace = List[Tuple[str, Tuple[int, ...]]]


class HybridModel(Module):
    def __init__(self, cfg: RunConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        m, ab = cfg.model, cfg.ablation
        self.input_size = cfg.data.input_size
        self.dense = None if ab.disable_dense_branch else DenseBranch(m.dense, rng)
        self.swin = SwinBranch(m.swin, self.input_size, rng)
        dense_ch = self.dense.out_channels if self.dense is not None else 0
        swin_ch = self.swin.out_channels
        self.refine = None if ab.disable_mab else RefineBranches(dense_ch, swin_ch, m.fusion, rng)
        self.head = FusionHead(dense_ch, swin_ch, m.fusion, m.num_classes, rng, ab)

    @property
    def num_classes(self) -> int:
        return self.cfg.model.num_classes

    def forward(self, x: Tensor, rng: Optional[np.random.Generator] = None,
                return_features: bool = False) -> Union[Tensor, Tuple[Tensor, Tensor]]:
        if x.ndim != 4 or x.shape[1] != 3:
            raise DimensionError(f"model expects B×3×H×W images, got {x.shape}")
        if x.shape[2] != self.input_size or x.shape[3] != self.input_size:
            raise DimensionError(
                f"model was built for {self.input_size}×{self.input_size} inputs, got {x.shape[2]}×{x.shape[3]}"
            )
        f_d = self.dense(x) if self.dense is not None else None
        f_t = self.swin(x)
        if self.refine is not None:
            f_d, f_t = self.refine(f_d, f_t)
        return self.head(f_d, f_t, rng=rng, return_features=return_features)

    def shape_trace(self) -> ShapeTrace:
        """Per-stage (C, H, W) of both branches and the head, from the config alone."""
        n = self.input_size
        trace: ShapeTrace = [("input", (3, n, n))]
        if self.dense is not None:
            trace += [(f"dense.{name}", shape) for name, shape in self.dense.shape_trace(n, n)]
        trace += [(f"swin.{name}", shape) for name, shape in self.swin.shape_trace(n, n)]
        f = self.cfg.model.fusion
        trace.append(("fusion.grid", (self.head.fuse.weight.shape[1], f.grid, f.grid)))
        trace.append(("fusion.features", (f.fused_dim,)))
        trace.append(("logits", (self.num_classes,)))
        return trace


def build_model(cfg: RunConfig, seed: int = 0) -> HybridModel:
    model = HybridModel(cfg, np.random.default_rng(seed))
    if cfg.model.dtype != "float32":
        model.astype(cfg.model.dtype)
    logger.debug("built %s model (%s): %d parameters", cfg.model.preset, cfg.model.variant, model.parameter_count())
    return model
