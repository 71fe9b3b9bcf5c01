"""Experiment orchestration behind the CLI subcommands.

Every command writes into ``run.out``::

    config.toml                 merged configuration echo
    run.log                     log file (installed by the CLI)
    seed-<n>/shared.ckpt        pretrained shared predictor
    seed-<n>/<mode>.ckpt        meta model
    seed-<n>/report-<method>.json / .csv
    seed-<n>/timing-<mode>.json
    report-<method>.json / .csv seed-aggregated report (``run``)
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import BaseModel

from .checkpoint import load_model, load_predictor, save_model, save_predictor
from .config import Config, save_config
from .dataset import Dataset, ingest, read_bundle, write_bundle
from .episodes import MetaTestSuite, SupportSizeDist, build_meta_test, iter_epoch
from .errors import TrainingDivergedError
from .evaluation import (
    StageReport,
    aggregate_reports,
    attach_rela_impr,
    evaluate_suite,
    report_to_csv,
    validation_auc,
    write_report,
)
from .meta import MetaSettings, ResusModel, meta_train
from .networks import ModelState, PredictorSpec, batch_loss_and_grads, init_state, pretrain_shared
from .optim import Adam
from .parser import DatasetManifest

logger = logging.getLogger(__name__)

# Independent random streams per seed.
_INIT_SHARED, _INIT_META, _EPISODES, _SHUFFLE = range(4)


class TimingReport(BaseModel):
    """Wall-clock cost of one training epoch and of meta-test inference."""

    mode: str
    seed: int
    train_seconds: float
    test_seconds_batched: float
    test_seconds_per_query: float
    n_tasks: int
    n_queries: int
    support_encodings_batched: int
    support_encodings_per_query: int


@dataclass(frozen=True)
class RunPaths:
    """File layout of one output directory."""

    root: Path

    def seed_dir(self, seed: int) -> Path:
        return self.root / f"seed-{seed}"

    def shared(self, seed: int) -> Path:
        return self.seed_dir(seed) / "shared.ckpt"

    def model(self, seed: int, mode: str) -> Path:
        if mode == "shared":
            return self.shared(seed)
        return self.seed_dir(seed) / f"{mode}.ckpt"

    def report(self, method: str, seed: int | None = None) -> Path:
        base = self.root if seed is None else self.seed_dir(seed)
        return base / f"report-{method}.json"

    def timing(self, seed: int, mode: str) -> Path:
        return self.seed_dir(seed) / f"timing-{mode}.json"

    @property
    def config(self) -> Path:
        return self.root / "config.toml"

    @property
    def log(self) -> Path:
        return self.root / "run.log"


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


def prepare_output(cfg: Config) -> RunPaths:
    """Create the output directory and echo the merged config into it."""
    paths = RunPaths(Path(cfg.run.out))
    paths.root.mkdir(parents=True, exist_ok=True)
    save_config(cfg, paths.config)
    return paths


def load_dataset(cfg: Config) -> Dataset:
    bundle = Path(cfg.data.bundle)
    if not bundle.exists():
        raise FileNotFoundError(f"dataset bundle not found: {bundle} (run 'resus ingest' first)")
    return read_bundle(bundle)


def predictor_spec(cfg: Config, dataset: Dataset) -> PredictorSpec:
    """Ψ and Φ share this architecture; they never share parameters."""
    return PredictorSpec.for_space(
        cfg.model.architecture,
        dataset.feature_space,
        embed_dim=cfg.model.embed_dim,
        mlp_widths=cfg.model.mlp_widths,
    )


def meta_settings(cfg: Config) -> MetaSettings:
    return MetaSettings(
        mode=cfg.meta.mode,
        tau=cfg.tau,
        beta_per_size=cfg.meta.beta_per_size,
        joint_shared=cfg.meta.joint_shared,
    )


def validation_suite(cfg: Config, dataset: Dataset, seed: int) -> MetaTestSuite:
    sizes = [s for s in cfg.eval.validation_sizes if 1 <= s <= cfg.tau]
    return build_meta_test(dataset.logs("validation"), sizes, cfg.coldness(), seed)


def meta_test_suite(cfg: Config, dataset: Dataset, seed: int) -> MetaTestSuite:
    return build_meta_test(dataset.logs("test"), cfg.eval_sizes(), cfg.coldness(), seed)


def support_distribution(cfg: Config, dataset: Dataset) -> SupportSizeDist:
    if cfg.meta.support_dist == "empirical":
        lengths = [len(log) for log in dataset.logs("validation")]
        return SupportSizeDist.empirical(lengths, cfg.tau)
    return SupportSizeDist.uniform(cfg.tau)


# --- commands --------------------------------------------------------------


def cmd_ingest(cfg: Config) -> tuple[Dataset, DatasetManifest]:
    """Parse the source, write the bundle and its manifest."""
    dataset, manifest = ingest(cfg.data)
    write_bundle(dataset, cfg.data.bundle)
    manifest_path = Path(cfg.data.manifest)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    manifest_path.write_text(manifest.model_dump_json(indent=2))
    logger.info("Wrote %s and %s", cfg.data.bundle, manifest_path)
    return dataset, manifest


def cmd_pretrain(cfg: Config, seed: int, dataset: Dataset | None = None) -> Path:
    """Train and freeze the shared predictor for ``seed``."""
    dataset = dataset or load_dataset(cfg)
    paths = prepare_output(cfg)
    spec = predictor_spec(cfg, dataset)
    state = init_state(spec, "predictor", dataset.feature_space, _rng(seed, _INIT_SHARED), cfg.model.precision)
    suite = validation_suite(cfg, dataset, seed)
    x, y = dataset.instances("train")
    logger.info("Pretraining %s shared predictor on %d instances (seed %d)", spec.architecture, len(y), seed)
    path = paths.shared(seed)
    try:
        trained = pretrain_shared(
            state,
            x,
            y,
            lambda s: validation_auc(ResusModel.shared_only(s), suite),
            lr=cfg.train.lr,
            batch_size=cfg.train.batch_size,
            patience=cfg.train.patience,
            max_epochs=cfg.train.max_epochs,
            rng=_rng(seed, _SHUFFLE),
        )
    except TrainingDivergedError as e:
        if isinstance(e.last_good, ModelState):
            save_predictor(e.last_good.freeze(), path)
            logger.error("Kept the last good shared predictor in %s", path)
        raise
    save_predictor(trained, path)
    return path


def _initial_model(
    cfg: Config, dataset: Dataset, seed: int, psi_path: Path | None
) -> ResusModel:
    settings = meta_settings(cfg)
    spec = predictor_spec(cfg, dataset)
    rng = _rng(seed, _INIT_META)
    psi: ModelState | None = None
    if settings.mode != "mus":
        if settings.joint_shared:
            psi = init_state(spec, "predictor", dataset.feature_space, _rng(seed, _INIT_SHARED), cfg.model.precision)
        else:
            psi = load_predictor(psi_path or RunPaths(Path(cfg.run.out)).shared(seed), expected=spec)
    return ResusModel.create(
        settings,
        psi,
        spec,
        dataset.feature_space,
        rng,
        dtype=cfg.model.precision,
        lambda_init=cfg.meta.lambda_init,
        beta_init=cfg.meta.beta_init,
    )


def cmd_meta_train(
    cfg: Config, seed: int, dataset: Dataset | None = None, psi_path: Path | None = None
) -> Path:
    """Meta-train the configured mode on top of the seed's shared predictor."""
    paths = prepare_output(cfg)
    if cfg.meta.mode == "shared":
        logger.info("Mode 'shared' has no meta phase; using %s", paths.shared(seed))
        return paths.shared(seed)
    dataset = dataset or load_dataset(cfg)
    model = _initial_model(cfg, dataset, seed, psi_path)
    suite = validation_suite(cfg, dataset, seed)
    path = paths.model(seed, cfg.meta.mode)
    try:
        trained = meta_train(
            model,
            dataset.logs("train"),
            support_distribution(cfg, dataset),
            lambda m: validation_auc(m, suite),
            lr=cfg.meta.lr,
            batch_tasks=cfg.meta.batch_tasks,
            patience=cfg.train.patience,
            max_epochs=cfg.train.max_epochs,
            rng=_rng(seed, _EPISODES),
            threads=cfg.run.threads,
        )
    except TrainingDivergedError as e:
        if isinstance(e.last_good, ResusModel):
            save_model(e.last_good, path)
            logger.error("Kept the last good meta model in %s", path)
        raise
    save_model(trained, path)
    return path


def _load_for_eval(cfg: Config, dataset: Dataset, checkpoint: Path) -> ResusModel:
    spec = predictor_spec(cfg, dataset)
    return load_model(checkpoint, expected_psi=spec, expected_phi=spec)


def cmd_evaluate(
    cfg: Config,
    seed: int,
    checkpoint: Path | None = None,
    beta_override: float | None = None,
    dataset: Dataset | None = None,
) -> StageReport:
    """Score a checkpoint on the meta-test suite and write its report."""
    dataset = dataset or load_dataset(cfg)
    paths = prepare_output(cfg)
    checkpoint = checkpoint or paths.model(seed, cfg.meta.mode)
    model = _load_for_eval(cfg, dataset, checkpoint)
    method = model.mode
    echo = cfg.to_dict()
    if beta_override is not None:
        if "beta" not in model.meta_params:
            logger.warning("Mode '%s' has no rescaling coefficient; ignoring the override", model.mode)
        else:
            model.meta_params["beta"] = np.full_like(model.meta_params["beta"], beta_override)
            method = f"{model.mode}-beta{beta_override:g}"
            echo["beta_override"] = beta_override
    suite = meta_test_suite(cfg, dataset, seed)
    if cfg.eval.export_suite_index:
        index_path = paths.seed_dir(seed) / "suite-index.json"
        index_path.parent.mkdir(parents=True, exist_ok=True)
        index_path.write_text(suite.to_index().model_dump_json(indent=2))
    report = evaluate_suite(
        model, suite, method=method, batched=cfg.eval.batched, seed=seed, config=echo
    )
    path = paths.report(method, seed)
    write_report(report, path)
    path.with_suffix(".csv").write_text(report_to_csv(report))
    logger.info("Wrote %s", path)
    return report


def _time_train_epoch(cfg: Config, dataset: Dataset, model: ResusModel, seed: int) -> float:
    start = time.perf_counter()
    if model.mode == "shared":
        x, y = dataset.instances("train")
        optimizer = Adam(lr=cfg.train.lr)
        state = model.psi.copy()
        order = _rng(seed, _SHUFFLE).permutation(len(y))
        for offset in range(0, len(order), cfg.train.batch_size):
            rows = order[offset : offset + cfg.train.batch_size]
            _, grads = batch_loss_and_grads(state, x[rows], y[rows])
            optimizer.step(state.params, grads)
    else:
        work = model.copy()
        optimizer = Adam(lr=cfg.meta.lr)
        for batch in iter_epoch(
            dataset.logs("train"), support_distribution(cfg, dataset),
            cfg.meta.batch_tasks, _rng(seed, _EPISODES),
        ):
            result = work.batch_loss_and_grads(batch.tasks)
            if result is None:
                continue
            flat = work.trainable()
            optimizer.step(flat, result[1])
            work.assign(flat)
    return time.perf_counter() - start


def cmd_timing(
    cfg: Config, seed: int, checkpoint: Path | None = None, dataset: Dataset | None = None
) -> TimingReport:
    """Time one training epoch and batched vs per-query meta-test inference."""
    dataset = dataset or load_dataset(cfg)
    paths = prepare_output(cfg)
    model = _load_for_eval(cfg, dataset, checkpoint or paths.model(seed, cfg.meta.mode))
    suite = meta_test_suite(cfg, dataset, seed)
    tasks = [t for size in suite.sizes for t in suite.tasks[size]]

    train_seconds = _time_train_epoch(cfg, dataset, model, seed)
    timings = {}
    encodings = {}
    for batched in (True, False):
        model.support_encodings = 0
        start = time.perf_counter()
        for task in tasks:
            model.predict_task(task, batched=batched)
        timings[batched] = time.perf_counter() - start
        encodings[batched] = model.support_encodings

    report = TimingReport(
        mode=model.mode,
        seed=seed,
        train_seconds=train_seconds,
        test_seconds_batched=timings[True],
        test_seconds_per_query=timings[False],
        n_tasks=len(tasks),
        n_queries=sum(t.query_size for t in tasks),
        support_encodings_batched=encodings[True],
        support_encodings_per_query=encodings[False],
    )
    path = paths.timing(seed, model.mode)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.model_dump_json(indent=2))
    return report


def run_pipeline(cfg: Config) -> StageReport:
    """ingest (when needed) → pretrain → meta-train → evaluate, for every seed.

    The shared predictor is always evaluated too, so the aggregated report
    carries RelaImpr against it.
    """
    paths = prepare_output(cfg)
    if Path(cfg.data.bundle).exists():
        dataset = read_bundle(cfg.data.bundle)
    else:
        dataset, _ = cmd_ingest(cfg)

    reports: list[StageReport] = []
    shared_reports: list[StageReport] = []
    for seed in cfg.train.seeds:
        logger.info("Seed %d: mode %s", seed, cfg.meta.mode)
        shared_path = cmd_pretrain(cfg, seed, dataset)
        shared_reports.append(cmd_evaluate(cfg, seed, shared_path, dataset=dataset))
        if cfg.meta.mode == "shared":
            continue
        model_path = cmd_meta_train(cfg, seed, dataset, psi_path=shared_path)
        reports.append(cmd_evaluate(cfg, seed, model_path, dataset=dataset))

    coldness = cfg.coldness()
    shared = aggregate_reports(shared_reports, coldness)
    write_report(shared, paths.report(shared.method))
    paths.report(shared.method).with_suffix(".csv").write_text(report_to_csv(shared))
    if not reports:
        return shared
    final = attach_rela_impr(aggregate_reports(reports, coldness), shared)
    write_report(final, paths.report(final.method))
    paths.report(final.method).with_suffix(".csv").write_text(report_to_csv(final))
    return final
