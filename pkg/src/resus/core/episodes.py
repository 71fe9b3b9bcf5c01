"""Meta-train task sampling and fixed meta-test suites."""

from __future__ import annotations

import logging
import zlib
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel

from .errors import ConfigError, EmptyDatasetError
from .models import ColdnessConfig, Task, UserLog, make_task

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SupportSizeDist:
    """Distribution of support-set sizes over 1..tau."""

    mode: str
    tau: int
    weights: np.ndarray

    def __post_init__(self) -> None:
        if self.weights.shape != (self.tau,) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ConfigError("support-size weights must cover 1..tau and sum to 1")

    @classmethod
    def uniform(cls, tau: int) -> SupportSizeDist:
        return cls("uniform", tau, np.full(tau, 1.0 / tau))

    @classmethod
    def empirical(cls, history_lengths: Sequence[int], tau: int) -> SupportSizeDist:
        """P(|S| = i) from the history lengths of cold users (|D_u| <= tau).

        Falls back to uniform when no cold user is observed.
        """
        lengths = np.asarray([n for n in history_lengths if 1 <= n <= tau], dtype=np.int64)
        if lengths.size == 0:
            logger.warning("No cold users observed; using a uniform support-size distribution")
            return cls.uniform(tau)
        counts = np.bincount(lengths - 1, minlength=tau).astype(np.float64)
        return cls("empirical", tau, counts / counts.sum())

    def sample(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        return rng.choice(np.arange(1, self.tau + 1), size=n, p=self.weights)


@dataclass(frozen=True)
class EpisodeBatch:
    """Tasks of distinct users trained together."""

    tasks: list[Task]
    epoch: int = 0
    batch_index: int = 0

    @property
    def total_queries(self) -> int:
        return sum(t.query_size for t in self.tasks)


def _eligible(logs: Sequence[UserLog]) -> list[UserLog]:
    eligible = [log for log in logs if len(log) >= 2]
    if not eligible:
        raise EmptyDatasetError("no training user has at least two instances")
    return eligible


def _train_task(log: UserLog, dist: SupportSizeDist, rng: np.random.Generator) -> Task:
    size = min(int(dist.sample(rng)), len(log) - 1)
    return make_task(log, size, time_ordered=log.has_timestamps, rng=rng)


def sample_train_batch(
    train_logs: Sequence[UserLog],
    dist: SupportSizeDist,
    batch_size: int,
    rng: np.random.Generator,
) -> EpisodeBatch:
    """Draw ``batch_size`` distinct users and build one task per user.

    Support sizes come from ``dist`` and are clamped to ``|D_u| - 1`` so every
    task keeps a non-empty query set.
    """
    eligible = _eligible(train_logs)
    if batch_size > len(eligible):
        raise ConfigError(f"batch of {batch_size} tasks exceeds {len(eligible)} eligible users")
    chosen = rng.choice(len(eligible), size=batch_size, replace=False)
    return EpisodeBatch(tasks=[_train_task(eligible[k], dist, rng) for k in chosen])


def iter_epoch(
    train_logs: Sequence[UserLog],
    dist: SupportSizeDist,
    batch_size: int,
    rng: np.random.Generator,
    epoch: int = 0,
) -> Iterator[EpisodeBatch]:
    """One pass over all eligible users in shuffled batches, resampling splits."""
    eligible = _eligible(train_logs)
    order = rng.permutation(len(eligible))
    for batch_index, start in enumerate(range(0, len(order), batch_size)):
        tasks = [_train_task(eligible[k], dist, rng) for k in order[start : start + batch_size]]
        yield EpisodeBatch(tasks=tasks, epoch=epoch, batch_index=batch_index)


def _user_seed(seed: int, user_id: str, size: int) -> list[int]:
    return [seed, zlib.crc32(user_id.encode("utf-8")), size]


@dataclass(frozen=True)
class MetaTestSuite:
    """Per support size, one task for every test user with enough history."""

    tasks: dict[int, list[Task]]
    coldness: ColdnessConfig
    skipped: dict[int, int] = field(default_factory=dict)

    @property
    def sizes(self) -> list[int]:
        return sorted(self.tasks)

    def stage_sizes(self, stage: str) -> list[int]:
        return [s for s in self.sizes if self.coldness.stage_of(s) == stage]

    def to_index(self) -> SuiteIndex:
        entries = [
            SuiteEntry(
                user_id=task.user_id,
                support_size=size,
                support=task.support_positions.tolist(),
                query=task.query_positions.tolist(),
            )
            for size in self.sizes
            for task in self.tasks[size]
        ]
        return SuiteIndex(
            tau=self.coldness.tau,
            skipped={str(k): v for k, v in sorted(self.skipped.items())},
            entries=entries,
        )


class SuiteEntry(BaseModel):
    user_id: str
    support_size: int
    support: list[int]
    query: list[int]


class SuiteIndex(BaseModel):
    """Audit export of a meta-test suite: instance offsets within each user log."""

    tau: int
    skipped: dict[str, int]
    entries: list[SuiteEntry]


def build_meta_test(
    test_logs: Sequence[UserLog],
    sizes: Sequence[int],
    config: ColdnessConfig,
    seed: int = 0,
) -> MetaTestSuite:
    """Build the evaluation tasks for every support size.

    Logs with timestamps use their earliest ``s`` instances as support; logs
    without draw the support with a generator keyed on (seed, user, size), so
    the suite does not depend on any training randomness.
    """
    bad = [s for s in sizes if s < 1 or s > config.tau]
    if bad:
        raise ConfigError(f"support sizes {bad} fall outside 1..{config.tau}")
    tasks: dict[int, list[Task]] = {}
    skipped: dict[int, int] = {}
    for size in sorted(set(sizes)):
        tasks[size] = []
        skipped[size] = 0
        for log in test_logs:
            if len(log) <= size:
                skipped[size] += 1
                continue
            rng = None if log.has_timestamps else np.random.default_rng(_user_seed(seed, log.user_id, size))
            tasks[size].append(make_task(log, size, time_ordered=log.has_timestamps, rng=rng))
    logger.debug("Meta-test suite: %s tasks per size", {s: len(t) for s, t in tasks.items()})
    return MetaTestSuite(tasks=tasks, coldness=config, skipped=skipped)
