"""Logloss, AUC, RelaImpr and stage-grouped reports."""

from __future__ import annotations

import csv
import io
import logging
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, Field, ValidationError
from scipy.stats import rankdata

from .episodes import MetaTestSuite
from .errors import DataError, UndefinedMetricError
from .kernels import bce_loss
from .meta import ResusModel
from .models import ColdnessConfig

logger = logging.getLogger(__name__)


def auc(labels: np.ndarray, scores: np.ndarray) -> float:
    """Area under the ROC curve by rank sum; tied scores count one half."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    positive = labels == 1
    n_pos = int(positive.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both positive and negative labels")
    ranks = rankdata(scores, method="average")
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def logloss(labels: np.ndarray, probs: np.ndarray) -> float:
    """Mean binary cross-entropy on clamped probabilities."""
    if len(labels) == 0:
        raise UndefinedMetricError("logloss of an empty prediction set")
    return float(np.mean(bce_loss(np.asarray(labels, dtype=np.float64), np.asarray(probs, dtype=np.float64))))


def rela_impr(target_auc: float, base_auc: float) -> float:
    """Relative AUC improvement over ``base_auc`` above the 0.5 floor, in percent."""
    if base_auc <= 0.5:
        raise UndefinedMetricError(f"RelaImpr is undefined for a base AUC of {base_auc}")
    return ((target_auc - 0.5) / (base_auc - 0.5) - 1.0) * 100.0


class MetricRow(BaseModel):
    """Pooled metrics of one support size."""

    method: str
    support_size: int
    stage: str | None = None
    n_queries: int = Field(gt=0)
    logloss: float = Field(ge=0.0)
    auc: float | None = Field(default=None, ge=0.0, le=1.0)
    logloss_std: float = 0.0
    auc_std: float = 0.0
    seeds: list[int] = Field(default_factory=list)
    logloss_per_seed: list[float] = Field(default_factory=list)
    auc_per_seed: list[float | None] = Field(default_factory=list)


class StageMetrics(BaseModel):
    """Arithmetic means over a stage's per-size rows."""

    stage: str
    sizes: list[int]
    logloss: float | None = None
    auc: float | None = None
    logloss_std: float = 0.0
    auc_std: float = 0.0
    rela_impr: float | None = None


class StageReport(BaseModel):
    method: str
    base_method: str | None = None
    seeds: list[int] = Field(default_factory=list)
    rows: list[MetricRow]
    stages: list[StageMetrics]
    excluded_sizes: dict[str, int] = Field(default_factory=dict)
    skipped_users: dict[str, int] = Field(default_factory=dict)
    config: dict[str, Any] = Field(default_factory=dict)

    def stage(self, name: str) -> StageMetrics:
        for stage in self.stages:
            if stage.stage == name:
                return stage
        raise KeyError(name)

    def row(self, size: int) -> MetricRow:
        for row in self.rows:
            if row.support_size == size:
                return row
        raise KeyError(size)


def _mean(values: Sequence[float | None]) -> float | None:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def _std(values: Sequence[float | None]) -> float:
    present = [v for v in values if v is not None]
    return float(np.std(present)) if len(present) > 1 else 0.0


def stage_metrics(rows: Sequence[MetricRow], coldness: ColdnessConfig) -> list[StageMetrics]:
    stages = []
    for name in coldness.stage_names:
        members = [r for r in rows if r.stage == name]
        stages.append(
            StageMetrics(
                stage=name,
                sizes=[r.support_size for r in members],
                logloss=_mean([r.logloss for r in members]),
                auc=_mean([r.auc for r in members]),
            )
        )
    return stages


def predict_suite(
    model: ResusModel, suite: MetaTestSuite, batched: bool = True
) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Pooled (labels, probabilities) of every support size's queries."""
    pooled = {}
    for size in suite.sizes:
        tasks = suite.tasks[size]
        if not tasks:
            continue
        labels = np.concatenate([t.query_y for t in tasks])
        probs = np.concatenate([model.predict_task(t, batched=batched) for t in tasks])
        pooled[size] = (labels, probs)
    return pooled


def evaluate_suite(
    model: ResusModel,
    suite: MetaTestSuite,
    *,
    method: str | None = None,
    batched: bool = True,
    seed: int | None = None,
    config: dict[str, Any] | None = None,
) -> StageReport:
    """Score ``model`` on every support size and average per cold-start stage.

    Sizes whose pooled queries hold a single class get no AUC; they are
    listed in ``excluded_sizes`` with their query counts.
    """
    method = method or model.mode
    rows = []
    excluded = {}
    for size, (labels, probs) in predict_suite(model, suite, batched).items():
        try:
            size_auc: float | None = auc(labels, probs)
        except UndefinedMetricError:
            size_auc = None
            excluded[str(size)] = len(labels)
            logger.warning("Support size %d: single-class queries, AUC excluded", size)
        size_loss = logloss(labels, probs)
        rows.append(
            MetricRow(
                method=method,
                support_size=size,
                stage=suite.coldness.stage_of(size),
                n_queries=len(labels),
                logloss=size_loss,
                auc=size_auc,
                seeds=[seed] if seed is not None else [],
                logloss_per_seed=[size_loss],
                auc_per_seed=[size_auc],
            )
        )
    return StageReport(
        method=method,
        seeds=[seed] if seed is not None else [],
        rows=rows,
        stages=stage_metrics(rows, suite.coldness),
        excluded_sizes=excluded,
        skipped_users={str(k): v for k, v in suite.skipped.items()},
        config=config or {},
    )


def validation_auc(model: ResusModel, suite: MetaTestSuite) -> float:
    """Mean pooled AUC over the suite's support sizes (early-stopping score)."""
    scores = []
    for labels, probs in predict_suite(model, suite).values():
        try:
            scores.append(auc(labels, probs))
        except UndefinedMetricError:
            continue
    if not scores:
        logger.warning("Validation suite has no size with both classes")
        return 0.5
    return float(np.mean(scores))


def aggregate_reports(reports: Sequence[StageReport], coldness: ColdnessConfig) -> StageReport:
    """Combine single-seed reports of one method into mean ± std rows and stages."""
    if not reports:
        raise ValueError("no reports to aggregate")
    method = reports[0].method
    seeds = [s for r in reports for s in r.seeds]
    sizes = sorted({row.support_size for r in reports for row in r.rows})
    rows = []
    for size in sizes:
        found = [r.row(size) for r in reports if any(x.support_size == size for x in r.rows)]
        aucs = [row.auc for row in found]
        losses = [row.logloss for row in found]
        rows.append(
            MetricRow(
                method=method,
                support_size=size,
                stage=found[0].stage,
                n_queries=sum(row.n_queries for row in found),
                logloss=_mean(losses),
                auc=_mean(aucs),
                logloss_std=_std(losses),
                auc_std=_std(aucs),
                seeds=seeds,
                logloss_per_seed=losses,
                auc_per_seed=aucs,
            )
        )
    stages = stage_metrics(rows, coldness)
    for stage in stages:
        per_seed = [r.stage(stage.stage) for r in reports]
        stage.logloss_std = _std([s.logloss for s in per_seed])
        stage.auc_std = _std([s.auc for s in per_seed])
    excluded: dict[str, int] = {}
    for report in reports:
        for size, count in report.excluded_sizes.items():
            excluded[size] = excluded.get(size, 0) + count
    return StageReport(
        method=method,
        seeds=seeds,
        rows=rows,
        stages=stages,
        excluded_sizes=excluded,
        skipped_users=reports[0].skipped_users,
        config=reports[0].config,
    )


def attach_rela_impr(report: StageReport, base: StageReport) -> StageReport:
    """Fill each stage's RelaImpr against the same stage of ``base``."""
    report.base_method = base.method
    for stage in report.stages:
        base_auc = base.stage(stage.stage).auc
        if stage.auc is None or base_auc is None:
            continue
        try:
            stage.rela_impr = rela_impr(stage.auc, base_auc)
        except UndefinedMetricError as e:
            logger.warning("Stage %s: %s", stage.stage, e)
    return report


def write_report(report: StageReport, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.model_dump_json(indent=2))


def read_report(path: str | Path) -> StageReport:
    try:
        return StageReport.model_validate_json(Path(path).read_text())
    except ValidationError as e:
        raise DataError(f"{path} is not a stage report: {e.error_count()} invalid fields") from e


def report_to_csv(report: StageReport) -> str:
    """Flatten per-size rows and stage aggregates into one CSV table."""
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(["method", "level", "key", "n_queries", "logloss", "logloss_std", "auc", "auc_std", "rela_impr"])
    for row in report.rows:
        writer.writerow(
            [report.method, "size", row.support_size, row.n_queries, row.logloss,
             row.logloss_std, "" if row.auc is None else row.auc, row.auc_std, ""]
        )
    for stage in report.stages:
        writer.writerow(
            [report.method, "stage", stage.stage, "",
             "" if stage.logloss is None else stage.logloss, stage.logloss_std,
             "" if stage.auc is None else stage.auc, stage.auc_std,
             "" if stage.rela_impr is None else stage.rela_impr]
        )
    return buffer.getvalue()
