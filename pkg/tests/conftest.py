"""Shared fixtures: synthetic logs, small datasets and fast configurations."""

from pathlib import Path

import pytest

from resus.core.config import Config
from resus.core.dataset import Dataset, build_dataset
from resus.core.models import FeatureSpace
from resus.core.networks import PredictorSpec
from resus.core.parser import RawDataset, split_users
from resus.core.synthetic import make_synthetic_logs, write_tabular

from .helpers import fast_config, small_space

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def synthetic_raw() -> RawDataset:
    return make_synthetic_logs(n_users=60, n_items=20, min_history=8, max_history=24, seed=0)


@pytest.fixture(scope="session")
def synthetic_dataset(synthetic_raw) -> Dataset:
    assignment = split_users((log.user_id for log in synthetic_raw.logs), seed=0)
    return build_dataset(synthetic_raw, assignment)


@pytest.fixture
def synthetic_csv(tmp_path, synthetic_raw) -> Path:
    path = tmp_path / "clicks.csv"
    write_tabular(synthetic_raw, path)
    return path


@pytest.fixture
def run_config(tmp_path, synthetic_csv) -> Config:
    return fast_config(tmp_path, synthetic_csv)


@pytest.fixture
def space() -> FeatureSpace:
    return small_space()


@pytest.fixture
def fm_spec(space) -> PredictorSpec:
    return PredictorSpec.for_space("fm", space, embed_dim=3)


@pytest.fixture
def movielens_dir() -> Path:
    return FIXTURES / "movielens"
