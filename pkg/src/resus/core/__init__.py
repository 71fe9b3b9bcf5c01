"""Core module - data, models, meta-learners and evaluation for cold-start CTR."""

from .config import Config, load_config
from .dataset import Dataset, read_bundle, write_bundle
from .episodes import MetaTestSuite, SupportSizeDist, build_meta_test, sample_train_batch
from .evaluation import StageReport, auc, evaluate_suite, logloss, rela_impr
from .meta import MetaSettings, ResusModel, meta_train
from .models import ColdnessConfig, FeatureSpace, Instance, Task, UserLog, make_task
from .networks import ModelState, PredictorSpec, encode, predict_logit, pretrain_shared

__all__ = [
    "ColdnessConfig",
    "Config",
    "Dataset",
    "FeatureSpace",
    "Instance",
    "MetaSettings",
    "MetaTestSuite",
    "ModelState",
    "PredictorSpec",
    "ResusModel",
    "StageReport",
    "SupportSizeDist",
    "Task",
    "UserLog",
    "auc",
    "build_meta_test",
    "encode",
    "evaluate_suite",
    "load_config",
    "logloss",
    "make_task",
    "meta_train",
    "predict_logit",
    "pretrain_shared",
    "read_bundle",
    "rela_impr",
    "sample_train_batch",
    "write_bundle",
]
