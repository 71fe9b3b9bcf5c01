"""Experiment configuration."""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .models import ColdnessConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib  # type: ignore

DATASET_TAU = {"movielens": 30, "frappe": 30, "taobao": 150, "tabular": 30}


@dataclass
class DataConfig:
    """Dataset source, preprocessing and split settings."""

    preset: str = "movielens"
    source: str = "data/ml-1m"
    bundle: str = "data/dataset.bundle"
    manifest: str = "data/manifest.json"
    delimiter: str = ","
    user_column: str = "user_id"
    item_column: str = "item_id"
    label_column: str = "label"
    timestamp_column: str = ""
    feature_columns: list[str] = field(default_factory=list)
    rating_threshold: float = 3.0
    min_item_interactions: int = 100
    split_ratio: list[float] = field(default_factory=lambda: [7.0, 2.0, 1.0])
    split_seed: int = 2022


@dataclass
class ModelConfig:
    """Shared predictor and feature encoder architecture."""

    architecture: str = "deepfm"
    embed_dim: int = 10
    mlp_widths: list[int] = field(default_factory=lambda: [64, 32])
    precision: str = "float32"


@dataclass
class MetaConfig:
    """Residual meta-learner settings."""

    mode: str = "rr"
    tau: int = 0
    support_dist: str = "uniform"
    batch_tasks: int = 32
    lr: float = 0.001
    beta_init: float = 1.0
    beta_per_size: bool = False
    lambda_init: float = 1.0
    joint_shared: bool = False


@dataclass
class TrainConfig:
    """Optimizer and early-stopping policy."""

    lr: float = 0.001
    batch_size: int = 1024
    patience: int = 2
    max_epochs: int = 10
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])


@dataclass
class EvalConfig:
    """Meta-test protocol."""

    sizes: list[int] = field(default_factory=list)
    validation_sizes: list[int] = field(default_factory=lambda: [5, 15, 25])
    batched: bool = True
    export_suite_index: bool = False


@dataclass
class RunConfig:
    """Output location and parallelism."""

    out: str = "runs/default"
    threads: int = 1


@dataclass
class Config:
    """Main configuration container."""

    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    run: RunConfig = field(default_factory=RunConfig)

    @property
    def tau(self) -> int:
        return self.meta.tau or DATASET_TAU.get(self.data.preset, 30)

    def coldness(self) -> ColdnessConfig:
        preset = ColdnessConfig.for_dataset(self.data.preset)
        if self.tau == preset.tau:
            return preset
        # Custom tau: three equal stages over 1..tau.
        third = self.tau // 3
        if third < 1:
            raise ConfigError(f"tau={self.tau} is too small for three stages")
        bounds = ((1, third), (third + 1, 2 * third), (2 * third + 1, self.tau))
        return ColdnessConfig(tau=self.tau, stage_bounds=bounds)

    def eval_sizes(self) -> list[int]:
        return list(self.eval.sizes) or self.coldness().sizes()

    def validate(self) -> None:
        if self.model.architecture not in ("lr", "fm", "deepfm"):
            raise ConfigError(f"unknown architecture '{self.model.architecture}'")
        if self.model.architecture == "deepfm" and not self.model.mlp_widths:
            raise ConfigError("deepfm needs at least one MLP width")
        if self.model.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got '{self.model.precision}'")
        if self.meta.mode not in ("nn", "rr", "mus", "shared"):
            raise ConfigError(f"unknown meta mode '{self.meta.mode}'")
        if self.meta.support_dist not in ("uniform", "empirical"):
            raise ConfigError(f"unknown support distribution '{self.meta.support_dist}'")
        if len(self.data.split_ratio) != 3 or min(self.data.split_ratio) <= 0:
            raise ConfigError("split_ratio needs three positive weights")
        if self.data.preset not in DATASET_TAU:
            raise ConfigError(f"unknown dataset preset '{self.data.preset}'")
        if self.train.batch_size < 1 or self.meta.batch_tasks < 1:
            raise ConfigError("batch sizes must be positive")
        if not self.train.seeds:
            raise ConfigError("at least one seed is required")
        if self.run.threads < 1:
            raise ConfigError("threads must be >= 1")
        bad = [s for s in self.eval_sizes() if s < 1 or s > self.tau]
        if bad:
            raise ConfigError(f"evaluation sizes {bad} fall outside 1..{self.tau}")
        self.coldness()

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


# Default config file locations (in priority order)
CONFIG_PATHS = [
    Path("resus.toml"),
    Path.home() / ".config" / "resus" / "config.toml",
]


def find_config_file() -> Path | None:
    """Find existing config file from priority list."""
    for path in CONFIG_PATHS:
        if path.exists():
            return path
    return None


def load_config(config_path: Path | None = None) -> Config:
    """Load configuration from file or return defaults.

    Args:
        config_path: Explicit path to config file. If None, searches default locations.

    Returns:
        Config object with loaded or default values.

    Raises:
        ConfigError: If the file cannot be read or holds invalid values.
    """
    path = config_path or find_config_file()
    if path is None:
        return Config()
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")

    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    config = parse_config(data)
    config.validate()
    return config


def _parse_section(cls: type, data: dict[str, Any], section: str) -> Any:
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {', '.join(sorted(unknown))}")
    defaults = cls()
    values = {}
    for name in known:
        default = getattr(defaults, name)
        value = data.get(name, default)
        if isinstance(default, bool) != isinstance(value, bool):
            raise ConfigError(f"{section}.{name} has the wrong type: {value!r}")
        if isinstance(default, list):
            if not isinstance(value, list):
                raise ConfigError(f"{section}.{name} must be a list")
            value = list(value)
        elif isinstance(default, float) and isinstance(value, int):
            value = float(value)
        elif type(value) is not type(default):
            raise ConfigError(
                f"{section}.{name} must be {type(default).__name__}, got {value!r}"
            )
        values[name] = value
    return cls(**values)


def parse_config(data: dict[str, Any]) -> Config:
    """Parse TOML data into Config object."""
    sections = {f.name: f.default_factory for f in dataclasses.fields(Config)}  # type: ignore[misc]
    unknown = set(data) - set(sections)
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(sorted(unknown))}")
    config = Config()
    for name, factory in sections.items():
        if name not in data:
            continue
        if not isinstance(data[name], dict):
            raise ConfigError(f"[{name}] must be a table")
        setattr(config, name, _parse_section(factory, data[name], name))
    return config


def apply_overrides(config: Config, overrides: dict[str, Any]) -> Config:
    """Return a copy of ``config`` with dotted keys (``meta.mode``) replaced."""
    data = config.to_dict()
    for dotted, value in overrides.items():
        if value is None:
            continue
        section, _, key = dotted.partition(".")
        if section not in data or key not in data[section]:
            raise ConfigError(f"unknown config key '{dotted}'")
        data[section][key] = value
    merged = parse_config(data)
    merged.validate()
    return merged


def _toml_value(value: Any) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, list):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    return repr(value)


def to_toml(config: Config) -> str:
    """Render the full configuration as TOML, every key included."""
    lines = []
    for section, values in config.to_dict().items():
        lines.append(f"[{section}]")
        lines.extend(f"{key} = {_toml_value(value)}" for key, value in values.items())
        lines.append("")
    return "\n".join(lines)


def save_config(config: Config, config_path: Path) -> None:
    """Save configuration to file, creating parent directories."""
    config_path.parent.mkdir(parents=True, exist_ok=True)
    config_path.write_text(to_toml(config))
