from src.nn.module import Module, ModuleList, ParamRegistry
from src.nn.layers import (
    BatchNorm2d,
    Conv2d,
    Conv2dParams,
    Dropout,
    LayerNorm,
    Linear,
    NormParams,
    adaptive_avg_pool2d,
    avg_pool2d,
    batch_norm,
    conv2d,
    dropout,
    global_avg_pool,
    layer_norm,
    linear,
)
from src.nn.profiling import MacCounter, count_macs, record_macs
