"""Configuration dataclasses and the nested run-config file loader."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from mvweak.errors import ConfigError

PTB_OPS = ("max", "sum", "mean")
LATENT_MODES = ("per_view", "single")
DISTANCES = ("euclidean", "squared_euclidean")


@dataclass
class ModelConfig:
    """Base-model architecture. Defaults are the full-size settings."""

    num_views: int = 4
    num_frames: int = 62
    image_size: int = 64
    d_model: int = 256
    num_heads: int = 4
    sl_width: int = 16
    num_bag_classes: int = 12
    conv_filters: tuple[int, ...] = (32, 64, 64)
    ffn_hidden: int = 400
    bag_hidden: int = 512
    ptb_op: str = "max"
    use_sl: bool = True
    use_pd: bool = True
    latent_mode: str = "per_view"
    layer_norm: bool = False
    init_seed: int = 0

    def __post_init__(self):
        self.conv_filters = tuple(int(f) for f in self.conv_filters)
        for name in ("num_views", "num_frames", "image_size", "d_model", "num_heads", "sl_width",
                     "num_bag_classes", "ffn_hidden", "bag_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.d_model % self.num_heads:
            raise ConfigError(f"num_heads ({self.num_heads}) must divide d_model ({self.d_model})")
        if self.ptb_op not in PTB_OPS:
            raise ConfigError(f"ptb_op must be one of {PTB_OPS}, got {self.ptb_op!r}")
        if self.latent_mode not in LATENT_MODES:
            raise ConfigError(f"latent_mode must be one of {LATENT_MODES}, got {self.latent_mode!r}")
        if not self.conv_filters or min(self.conv_filters) < 1:
            raise ConfigError("conv_filters must be non-empty and positive")
        if self.image_size % 2 ** len(self.conv_filters):
            raise ConfigError(f"image_size {self.image_size} not divisible by 2^{len(self.conv_filters)}")

    @property
    def num_latent_views(self):
        return self.num_views if self.latent_mode == "per_view" else 1


@dataclass
class DownstreamConfig(ModelConfig):
    head_hidden: tuple[int, ...] = (512, 256)
    num_task_classes: int = 1
    use_latents: bool = True
    transfer_weights: bool = False

    def __post_init__(self):
        super().__post_init__()
        self.head_hidden = tuple(int(w) for w in self.head_hidden)
        if self.num_task_classes < 1 or any(w < 1 for w in self.head_hidden):
            raise ConfigError("head widths and num_task_classes must be positive")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.99
    epochs: int = 100
    batch_size: int = 8
    latent_weight: float = 1.0
    margin: float = 1.0
    distance: str = "euclidean"
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in (0, 1)")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.margin <= 0:
            raise ConfigError("margin must be positive")
        if self.distance not in DISTANCES:
            raise ConfigError(f"distance must be one of {DISTANCES}")


def scaled_model_config(**overrides):
    """Small architecture for tests and desk-scale runs (S=2, T=8, d=16, N=4, C=3)."""
    base = dict(num_views=2, num_frames=8, image_size=16, d_model=16, num_heads=2, sl_width=4,
                num_bag_classes=3, conv_filters=(4, 8, 8), ffn_hidden=32, bag_hidden=32)
    base.update(overrides)
    return ModelConfig(**base)


def scaled_downstream_config(**overrides):
    base = dataclasses.asdict(scaled_model_config())
    base.update(head_hidden=(32, 16))
    base.update(overrides)
    return DownstreamConfig(**base)


# -- nested run config ------------------------------------------------------


@dataclass
class GridConfig:
    rows: int = 4
    cols: int = 4


@dataclass
class PathsConfig:
    data: str = "runs/data"
    base: str = "runs/base"
    embeddings: str = "runs/embeddings"
    downstream: str = "runs/downstream"
    metrics: str = "runs/metrics.json"


@dataclass
class ScenarioSection:
    # frame-labelled sequences (split train/test) plus a separate pool that
    # keeps only action bags and trains the base model; 109 keeps the 720:264
    # weak-to-downstream-train ratio against 40 downstream training sequences
    num_sequences: int = 80
    num_weak_sequences: int = 109
    num_classes: int = 3
    image_size: int = 32
    block_size: int = 6
    event_count: tuple[int, int] = (0, 3)
    event_length: tuple[int, int] = (3, 10)
    noise_std: float = 0.03
    train_fraction: float = 0.5


def _desk_model():
    return dict(num_views=2, num_frames=16, image_size=32, d_model=32, num_heads=4, sl_width=16,
                num_bag_classes=3, conv_filters=(16, 32, 32), ffn_hidden=64, bag_hidden=64)


@dataclass
class RunConfig:
    """Everything a pipeline run needs; sections mirror the library configs.

    The defaults describe the desk-scale synthetic setting (2 views, 16
    frames, 3 classes); override sections to get the full-size model.
    """

    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    model: ModelConfig = field(default_factory=lambda: ModelConfig(**_desk_model()))
    downstream: DownstreamConfig = field(
        default_factory=lambda: DownstreamConfig(**_desk_model(), head_hidden=(64, 32), num_task_classes=3)
    )
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=30, batch_size=4))
    downstream_train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=60))
    grid: GridConfig = field(default_factory=GridConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    task: str = "recognition"
    seed: int = 0


def _build(cls, raw, path):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or '<root>'}: expected a mapping, got {type(raw).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        where = ", ".join(f"{path}.{k}" if path else k for k in unknown)
        raise ConfigError(f"unknown config keys: {where}")
    defaults = cls()
    kwargs = {}
    for name, value in raw.items():
        current = getattr(defaults, name)
        key = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(current):
            merged = dataclasses.asdict(current)
            if not isinstance(value, dict):
                raise ConfigError(f"{key}: expected a mapping")
            unknown = sorted(set(value) - set(merged))
            if unknown:
                raise ConfigError("unknown config keys: " + ", ".join(f"{key}.{k}" for k in unknown))
            merged.update(value)
            try:
                kwargs[name] = type(current)(**merged)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{key}: {exc}") from None
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or '<root>'}: {exc}") from None


def load_run_config(path=None, overrides=None):
    """Read a YAML/JSON run config; ``overrides`` maps ``section.key`` to values."""
    raw = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            raw = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        raw = raw or {}
    for dotted, value in (overrides or {}).items():
        node = raw
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    cfg = _build(RunConfig, raw, "")
    if cfg.task not in ("detection", "recognition"):
        raise ConfigError(f"task must be 'detection' or 'recognition', got {cfg.task!r}")
    return cfg


def config_to_dict(cfg):
    return json.loads(json.dumps(dataclasses.asdict(cfg)))
