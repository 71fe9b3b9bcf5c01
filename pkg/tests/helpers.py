"""Builders shared by several test modules."""

from pathlib import Path

import numpy as np

from resus.core.config import Config
from resus.core.models import FeatureSpace, UserLog


def make_log(user_id, labels, n_fields=3, timestamps=None, seed=0):
    """A user log with random field indices in 1..3."""
    rng = np.random.default_rng(seed)
    n = len(labels)
    return UserLog(
        user_id=user_id,
        features=rng.integers(1, 4, size=(n, n_fields)).astype(np.int32),
        labels=np.asarray(labels, dtype=np.int8),
        timestamps=None if timestamps is None else np.asarray(timestamps, dtype=np.int64),
    )


def small_space(n_fields=3, tokens=3):
    """Feature space with ``tokens`` known values per field (vocab size tokens + 1)."""
    names = [f"f{j}" for j in range(n_fields)]
    rows = [[f"t{k}"] * n_fields for k in range(tokens)]
    return FeatureSpace.build(names, rows)


def fast_config(tmp_path: Path, source: Path, **sections) -> Config:
    """Configuration small enough for a full pipeline in a few seconds."""
    cfg = Config()
    cfg.data.preset = "tabular"
    cfg.data.source = str(source)
    cfg.data.bundle = str(tmp_path / "data" / "dataset.bundle")
    cfg.data.manifest = str(tmp_path / "data" / "manifest.json")
    cfg.data.timestamp_column = "timestamp"
    cfg.data.min_item_interactions = 1
    cfg.model.architecture = "deepfm"
    cfg.model.embed_dim = 4
    cfg.model.mlp_widths = [8]
    cfg.meta.tau = 6
    cfg.meta.batch_tasks = 16
    cfg.meta.lr = 0.01
    cfg.train.lr = 0.01
    cfg.train.batch_size = 128
    cfg.train.max_epochs = 2
    cfg.train.seeds = [0]
    cfg.eval.validation_sizes = [2, 4]
    cfg.run.out = str(tmp_path / "run")
    for section, values in sections.items():
        for key, value in values.items():
            setattr(getattr(cfg, section), key, value)
    cfg.validate()
    return cfg


def fast_toml(tmp_path: Path, source: Path) -> str:
    """The same fast configuration as a TOML document."""
    return f"""
[data]
preset = "tabular"
source = "{source}"
bundle = "{tmp_path / 'data' / 'dataset.bundle'}"
manifest = "{tmp_path / 'data' / 'manifest.json'}"
timestamp_column = "timestamp"
min_item_interactions = 1

[model]
architecture = "fm"
embed_dim = 4

[meta]
mode = "rr"
tau = 6
batch_tasks = 16
lr = 0.01

[train]
lr = 0.01
batch_size = 128
max_epochs = 2
seeds = [0]

[eval]
validation_sizes = [2, 4]

[run]
out = "{tmp_path / 'run'}"
"""
