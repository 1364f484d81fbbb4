"""
Run configuration.

A RunConfig is four typed sections (model, data, train, ablation). Files are
read with PyYAML; a `resolved_config.json` written by a previous run is read
with json (PyYAML 1.1 takes `1e-08` for a string). Loading
order: preset defaults -> variant toggles -> keys from the file. Every key
in the file must exist in the schema (docs/config_schema.md); unknown keys and
out-of-range values raise ConfigError naming the dotted key.
"""

import copy
import json
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import Any, Dict, List, Optional

import yaml

from src.core.errors import ConfigError

CONFIG_FILENAME = "config.yaml"
SEED_ENV_VAR = "HDSW_SEED"


# ── Model sections ───────────────────────────────────────────────────────

@dataclass
class DenseSection:
    stem_kernel: int = 3
    stem_stride: int = 2
    stem_channels: int = 16
    stem_pool: int = 0  # avg-pool stride after the stem conv, 0 = none
    growth_rate: int = 8
    block_layers: List[int] = field(default_factory=lambda: [4, 4])
    compression: float = 0.5
    bottleneck: bool = False
    bottleneck_width: int = 4
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5


@dataclass
class SwinSection:
    patch_size: int = 4
    embed_dim: int = 16
    depths: List[int] = field(default_factory=lambda: [2, 2, 6, 2])
    num_heads: List[int] = field(default_factory=lambda: [2, 4, 8, 16])
    window_size: int = 4
    mlp_ratio: float = 4.0
    relative_position_bias: bool = True
    ln_eps: float = 1e-5


@dataclass
class FusionSection:
    grid: int = 2
    fused_dim: int = 64
    dropout: float = 0.3
    squeeze_ratio: int = 4
    lambda_init: float = 0.0
    mlka_kernels: List[int] = field(default_factory=lambda: [3, 5, 7])


@dataclass
class ModelConfig:
    preset: str = "desk"
    variant: str = "ca_dense_swinv2"
    num_classes: int = 5
    dtype: str = "float32"
    dense: DenseSection = field(default_factory=DenseSection)
    swin: SwinSection = field(default_factory=SwinSection)
    fusion: FusionSection = field(default_factory=FusionSection)


@dataclass
class AblationConfig:
    disable_mab: bool = False
    disable_dense_branch: bool = False
    disable_squeeze: bool = False


# ── Data / train sections ────────────────────────────────────────────────

@dataclass
class AugmentationSection:
    enabled: bool = False
    hflip_p: float = 0.5
    vflip_p: float = 0.5
    scale_min: float = 0.8
    scale_max: float = 1.2
    shear_deg: float = 10.0


@dataclass
class DataConfig:
    manifest: Optional[str] = None
    input_size: int = 64
    test_fraction: float = 0.2
    seed: Optional[int] = None
    workers: int = 0
    oversample: bool = False
    balance_factor: float = 1.0
    cache_items: int = 2048
    augmentation: AugmentationSection = field(default_factory=AugmentationSection)


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    base_lr: float = 1e-3
    lr_decay_factor: float = 0.15
    lr_decay_period: int = 20
    weight_decay: float = 0.04
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    checkpoint_every: int = 10
    eval_every: int = 0
    progress: bool = True
    out_dir: str = "runs/desk"


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def get(self, key: str, default: Any = None) -> Any:
        """Dotted lookup, e.g. config.get('train.base_lr')."""
        val: Any = self
        for k in key.split("."):
            if is_dataclass(val) and hasattr(val, k):
                val = getattr(val, k)
            elif isinstance(val, dict) and k in val:
                val = val[k]
            else:
                return default
        return val

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save_resolved(self, path: str) -> None:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_json() + "\n")


# ── Presets and variants ─────────────────────────────────────────────────

def desk_preset() -> RunConfig:
    """64×64 inputs, C=16, M=4, two small dense blocks. The acceptance configuration."""
    return RunConfig()


def full_preset() -> RunConfig:
    """224×224 inputs, C=96, M=7, DenseNet-style {6,12,24,16} blocks."""
    cfg = RunConfig()
    cfg.model.preset = "full"
    cfg.model.dense = DenseSection(
        stem_kernel=7, stem_stride=2, stem_channels=64, stem_pool=2,
        growth_rate=32, block_layers=[6, 12, 24, 16], compression=0.5, bottleneck=True,
    )
    cfg.model.swin = SwinSection(embed_dim=96, num_heads=[3, 6, 12, 24], window_size=7)
    cfg.model.fusion = FusionSection(grid=7, fused_dim=512)
    cfg.data.input_size = 224
    cfg.data.augmentation.enabled = True
    cfg.data.oversample = True
    cfg.data.cache_items = 1024
    cfg.train.epochs = 100
    cfg.train.out_dir = "runs/full"
    return cfg


PRESETS = {"desk": desk_preset, "full": full_preset}

# Ablation rows of the published comparison, expressed as toggles.
VARIANTS: Dict[str, Dict[str, bool]] = {
    "customized_swinv2": {"disable_dense_branch": True, "disable_mab": True, "disable_squeeze": True},
    "ca_swinv2": {"disable_dense_branch": True, "disable_mab": False, "disable_squeeze": False},
    "dense_swinv2": {"disable_dense_branch": False, "disable_mab": False, "disable_squeeze": True},
    "ca_dense_swinv2": {"disable_dense_branch": False, "disable_mab": False, "disable_squeeze": False},
}


def apply_variant(cfg: RunConfig, variant: str) -> RunConfig:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant '{variant}' (choose from {', '.join(VARIANTS)})", "model.variant")
    cfg.model.variant = variant
    for name, value in VARIANTS[variant].items():
        setattr(cfg.ablation, name, value)
    return cfg


# ── Merging user keys ────────────────────────────────────────────────────

def _coerce(value: Any, current: Any, key: str) -> Any:
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", key)
        return value
    if isinstance(current, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", key)
        return value
    if isinstance(current, float):
        if isinstance(value, str):
            # YAML 1.1 leaves `1e-3` as a string
            try:
                return float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", key)
        return float(value)
    if isinstance(current, list):
        if not isinstance(value, list):
            raise ConfigError(f"expected a list, got {value!r}", key)
        kind = type(current[0]) if current else None
        if kind is not None and not all(isinstance(v, kind) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"expected a list of {kind.__name__}, got {value!r}", key)
        return list(value)
    # str or Optional[...] fields default to a str or None
    if value is not None and not isinstance(value, (str, int)):
        raise ConfigError(f"expected a string, got {value!r}", key)
    return value


def _merge(target: Any, raw: Dict[str, Any], prefix: str = "") -> None:
    names = {f.name for f in fields(target)}
    for key, value in raw.items():
        dotted = f"{prefix}{key}"
        if key not in names:
            raise ConfigError("unknown config key", dotted)
        current = getattr(target, key)
        if is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"expected a mapping, got {value!r}", dotted)
            _merge(current, value, dotted + ".")
        else:
            setattr(target, key, _coerce(value, current, dotted))


def _require(cond: bool, key: str, message: str) -> None:
    if not cond:
        raise ConfigError(message, key)


def validate(cfg: RunConfig) -> RunConfig:
    m, d, t = cfg.model, cfg.data, cfg.train
    _require(m.preset in PRESETS, "model.preset", f"must be one of {sorted(PRESETS)}")
    _require(m.variant in VARIANTS, "model.variant", f"must be one of {sorted(VARIANTS)}")
    _require(m.dtype in ("float32", "float64"), "model.dtype", "must be float32 or float64")
    _require(m.num_classes >= 2, "model.num_classes", "must be at least 2")

    sw = m.swin
    n_stages = len(sw.depths)
    _require(n_stages >= 1, "model.swin.depths", "needs at least one stage")
    _require(len(sw.num_heads) == n_stages, "model.swin.num_heads", "needs one entry per stage")
    _require(all(dep > 0 and dep % 2 == 0 for dep in sw.depths), "model.swin.depths",
             "every stage depth must be a positive even number (W-MSA/SW-MSA pairs)")
    _require(sw.patch_size > 0 and sw.embed_dim > 0 and sw.window_size > 0,
             "model.swin", "patch_size, embed_dim and window_size must be positive")
    for s, heads in enumerate(sw.num_heads):
        dim = sw.embed_dim * 2 ** s
        _require(heads > 0 and dim % heads == 0, f"model.swin.num_heads",
                 f"stage {s + 1} dim {dim} is not divisible by {heads} heads")
    _require(sw.mlp_ratio > 0, "model.swin.mlp_ratio", "must be positive")
    stride = sw.patch_size * 2 ** (n_stages - 1)
    _require(d.input_size % stride == 0, "data.input_size",
             f"must be divisible by {stride} (patch size × stage downsampling)")
    for s in range(n_stages):
        res = d.input_size // (sw.patch_size * 2 ** s)
        if res > sw.window_size:
            _require(res % sw.window_size == 0, "model.swin.window_size",
                     f"stage {s + 1} map {res}×{res} is not divisible by window {sw.window_size}")

    dn = m.dense
    _require(dn.growth_rate > 0 and dn.stem_channels > 0, "model.dense", "growth_rate and stem_channels must be positive")
    _require(len(dn.block_layers) >= 1 and all(n >= 1 for n in dn.block_layers),
             "model.dense.block_layers", "needs at least one block of at least one layer")
    _require(0.0 < dn.compression <= 1.0, "model.dense.compression", "must be in (0, 1]")
    _require(dn.stem_pool in (0, 2), "model.dense.stem_pool", "must be 0 or 2")
    _require(0.0 < dn.bn_momentum <= 1.0 and dn.bn_eps > 0, "model.dense", "bn_momentum in (0,1], bn_eps > 0")

    fu = m.fusion
    _require(fu.grid >= 1, "model.fusion.grid", "must be at least 1")
    _require(fu.fused_dim >= 1, "model.fusion.fused_dim", "must be at least 1")
    _require(0.0 <= fu.dropout < 1.0, "model.fusion.dropout", "must be in [0, 1)")
    _require(fu.squeeze_ratio >= 1, "model.fusion.squeeze_ratio", "must be at least 1")
    _require(all(k % 2 == 1 for k in fu.mlka_kernels) and fu.mlka_kernels,
             "model.fusion.mlka_kernels", "kernels must be odd")

    _require(d.seed is None or (isinstance(d.seed, int) and d.seed >= 0), "data.seed", "must be a non-negative integer")
    _require(d.manifest is None or isinstance(d.manifest, str), "data.manifest", "must be a path")
    _require(0.0 < d.test_fraction < 1.0, "data.test_fraction", "must be in (0, 1)")
    _require(d.workers >= 0, "data.workers", "must be >= 0")
    _require(d.balance_factor > 0, "data.balance_factor", "must be positive")
    _require(d.cache_items >= 0, "data.cache_items", "must be >= 0")
    aug = d.augmentation
    _require(0.0 <= aug.hflip_p <= 1.0 and 0.0 <= aug.vflip_p <= 1.0, "data.augmentation", "flip probabilities in [0,1]")
    _require(0.0 < aug.scale_min <= aug.scale_max, "data.augmentation.scale_min", "need 0 < scale_min <= scale_max")
    _require(0.0 <= aug.shear_deg < 45.0, "data.augmentation.shear_deg", "must be in [0, 45)")

    _require(t.epochs >= 0, "train.epochs", "must be >= 0")
    _require(t.batch_size >= 1, "train.batch_size", "must be >= 1")
    _require(t.base_lr > 0, "train.base_lr", "must be positive")
    _require(0.0 < t.lr_decay_factor <= 1.0, "train.lr_decay_factor", "must be in (0, 1]")
    _require(t.lr_decay_period >= 1, "train.lr_decay_period", "must be >= 1")
    _require(t.weight_decay >= 0, "train.weight_decay", "must be >= 0")
    _require(t.checkpoint_every >= 0 and t.eval_every >= 0, "train", "cadences must be >= 0")
    return cfg


def from_dict(raw: Dict[str, Any]) -> RunConfig:
    raw = copy.deepcopy(raw or {})
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping")
    model_raw = raw.get("model", {}) or {}
    if not isinstance(model_raw, dict):
        raise ConfigError("expected a mapping", "model")
    preset = model_raw.get("preset", "desk")
    if preset not in PRESETS:
        raise ConfigError(f"must be one of {sorted(PRESETS)}", "model.preset")
    cfg = PRESETS[preset]()
    apply_variant(cfg, model_raw.get("variant", cfg.model.variant))
    _merge(cfg, raw)
    return validate(cfg)


def load_run_config(path: Optional[str] = None) -> RunConfig:
    if path is None:
        candidate = os.path.join(os.getcwd(), CONFIG_FILENAME)
        path = candidate if os.path.exists(candidate) else None
    if path is None:
        return validate(desk_preset())
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = (json.load(f) if path.endswith(".json") else yaml.safe_load(f)) or {}
    except OSError as e:
        raise ConfigError(f"cannot read config file: {e}", path) from e
    except (yaml.YAMLError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot parse config file: {e}", path) from e
    return from_dict(raw)


def resolve_seed(cli_seed: Optional[int], cfg: RunConfig) -> int:
    """--seed beats the config file, which beats $HDSW_SEED, which beats 0."""
    if cli_seed is not None:
        return int(cli_seed)
    if cfg.data.seed is not None:
        return int(cfg.data.seed)
    env = os.getenv(SEED_ENV_VAR)
    if env:
        try:
            return int(env)
        except ValueError as e:
            raise ConfigError(f"must be an integer, got {env!r}", SEED_ENV_VAR) from e
    return 0
