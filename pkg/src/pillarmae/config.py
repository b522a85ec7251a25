"""Run configuration: strict JSON in, lossless JSON out.

Unknown keys are fatal so hyperparameter typos cannot slip through.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .masking import STRATEGIES
from .pillars import GridSpec
from .scenes import SceneSpec


@dataclass(frozen=True)
class OptimizerConfig:
    lr_max: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01


@dataclass(frozen=True)
class ScheduleConfig:
    warmup_frac: float = 0.1
    start_div: float = 25.0
    final_div: float = 100.0


@dataclass(frozen=True)
class MaskConfig:
    strategy: str = "patch"
    ratio: float = 0.75

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"MaskConfig: unknown strategy {self.strategy!r}")
        if not (0.0 < self.ratio < 1.0):
            raise ValueError(f"MaskConfig: ratio must be in (0, 1), got {self.ratio}")


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"          # "synthetic" | "csv_dir"
    scene: SceneSpec = field(default_factory=SceneSpec)
    scenes_per_epoch: int = 8
    csv_dir: str = ""

    def __post_init__(self):
        if self.source not in ("synthetic", "csv_dir"):
            raise ValueError(f"DataConfig: unknown source {self.source!r}")
        if self.source == "csv_dir" and not self.csv_dir:
            raise ValueError("DataConfig: csv_dir source needs a path")
        if self.scenes_per_epoch < 1:
            raise ValueError("DataConfig: scenes_per_epoch must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    grid: GridSpec = field(
        default_factory=lambda: GridSpec(-24.96, 24.96, -24.96, 24.96, -2.0, 4.0, 0.32, 0.32)
    )
    pfe_channels: tuple[int, int] = (64, 128)
    stage_dims: tuple[int, int, int] = (128, 256, 256)
    layers_per_stage: int = 2
    heads: int = 8
    mlp_ratio: int = 2
    region_sizes: tuple[int, int, int] = (8, 4, 4)
    mask: MaskConfig = field(default_factory=MaskConfig)
    k_points: int = 64
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    epochs: int = 30
    batch_size: int = 1
    seed: int = 0
    use_intensity: bool = True
    augment: bool = True
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self):
        if self.pfe_channels[1] != self.stage_dims[0]:
            raise ValueError(
                f"RunConfig: PFE output {self.pfe_channels[1]} must match stage-1 dim {self.stage_dims[0]}"
            )
        for name in ("layers_per_stage", "heads", "mlp_ratio", "k_points", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"RunConfig: {name} must be >= 1")
        for d in self.stage_dims:
            if d % self.heads != 0:
                raise ValueError(f"RunConfig: stage dim {d} not divisible by {self.heads} heads")


_TUPLE_FIELDS = {"pfe_channels", "stage_dims", "region_sizes", "vehicles", "pedestrians"}
_NESTED_TUPLES = {"vehicle_size", "pedestrian_size"}


_SECTION_TYPES = {
    "grid": GridSpec,
    "scene": SceneSpec,
    "mask": MaskConfig,
    "optimizer": OptimizerConfig,
    "schedule": ScheduleConfig,
    "data": DataConfig,
}


def _build_dataclass(cls, obj: dict, path: str = ""):
    if not isinstance(obj, dict):
        raise ValueError(f"config: {path or cls.__name__} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(obj) - known
    if unknown:
        raise ValueError(f"config: unknown key {sorted(unknown)[0]!r} in {path or 'top level'}")
    kwargs = {}
    for name, value in obj.items():
        sub = f"{path}.{name}" if path else name
        if name in _SECTION_TYPES and isinstance(value, dict):
            kwargs[name] = _build_dataclass(_SECTION_TYPES[name], value, sub)
        elif name in _TUPLE_FIELDS:
            kwargs[name] = tuple(value)
        elif name in _NESTED_TUPLES:
            kwargs[name] = tuple(tuple(v) for v in value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(obj: dict) -> RunConfig:
    return _build_dataclass(RunConfig, obj)


def config_to_dict(cfg: RunConfig) -> dict:
    return asdict(cfg)


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        return config_from_dict(json.load(f))


def save_config(cfg: RunConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config_to_dict(cfg), f, indent=2)
        f.write("\n")
