"""Parsers and preprocessing for public CTR datasets."""

from __future__ import annotations

import csv
import logging
import re
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from .errors import ConfigError, DataError, EmptyDatasetError, ParseError
from .models import FeatureSpace, UserLog

logger = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")
RATING_SOURCES = ("movielens",)
MOVIELENS_SCHEMA = ("user_id", "age", "gender", "occupation", "movie_id", "genre", "year")
_YEAR = re.compile(r"\((\d{4})\)\s*$")


@dataclass
class RawUserLog:
    """One user's instances as raw string tokens (before vocabulary encoding)."""

    user_id: str
    rows: list[tuple[str, ...]] = field(default_factory=list)
    labels: list[int] = field(default_factory=list)
    timestamps: list[int] | None = None

    def __len__(self) -> int:
        return len(self.labels)

    def sort_by_time(self) -> None:
        if self.timestamps is None:
            return
        order = sorted(range(len(self.labels)), key=self.timestamps.__getitem__)
        self.rows = [self.rows[k] for k in order]
        self.labels = [self.labels[k] for k in order]
        self.timestamps = [self.timestamps[k] for k in order]


@dataclass
class RawDataset:
    """Parsed source data: feature fields (key field excluded) and user logs."""

    source: str
    key_field: str
    field_names: tuple[str, ...]
    item_field: str
    logs: list[RawUserLog]
    rating_threshold: float | None = None

    @property
    def schema(self) -> list[str]:
        return [self.key_field, *self.field_names]

    @property
    def has_timestamps(self) -> bool:
        return bool(self.logs) and all(log.timestamps is not None for log in self.logs)

    @property
    def n_instances(self) -> int:
        return sum(len(log) for log in self.logs)

    def item_counts(self) -> Counter[str]:
        column = self.field_names.index(self.item_field)
        return Counter(row[column] for log in self.logs for row in log.rows)


class DatasetManifest(BaseModel):
    """Preprocessing parameters and dataset statistics, echoed as JSON."""

    source: str
    schema_fields: list[str]
    key_field: str
    item_field: str
    rating_threshold: float | None = None
    min_item_interactions: int = 100
    split_ratio: list[float] = Field(default_factory=lambda: [7.0, 2.0, 1.0])
    seed: int = 2022
    has_timestamps: bool = False
    n_users_raw: int = 0
    n_instances_raw: int = 0
    n_users: int = 0
    n_items: int = 0
    n_instances: int = 0
    sparsity: float = 0.0
    n_feature_fields: int = 0
    n_features: int = 0
    split_users: dict[str, int] = Field(default_factory=dict)
    split_instances: dict[str, int] = Field(default_factory=dict)

    @field_validator("split_ratio")
    @classmethod
    def _positive_ratio(cls, value: list[float]) -> list[float]:
        if len(value) != 3 or min(value) <= 0:
            raise ValueError("split_ratio needs three positive weights")
        return value

    @model_validator(mode="after")
    def _threshold_for_ratings(self) -> DatasetManifest:
        if self.rating_threshold is not None and self.source not in RATING_SOURCES:
            raise ValueError(f"rating threshold is not valid for source '{self.source}'")
        return self


@dataclass(frozen=True)
class SplitAssignment:
    """Maps every user to exactly one of train/validation/test."""

    assignment: dict[str, str]

    def users(self, split: str) -> list[str]:
        return [u for u, s in self.assignment.items() if s == split]

    def counts(self) -> dict[str, int]:
        counts = Counter(self.assignment.values())
        return {split: counts.get(split, 0) for split in SPLITS}


def _read_lines(path: Path, encoding: str = "latin-1") -> Iterable[tuple[int, str]]:
    if not path.exists():
        raise FileNotFoundError(f"missing input file: {path}")
    with open(path, encoding=encoding) as f:
        for number, line in enumerate(f, start=1):
            line = line.rstrip("\r\n")
            if line:
                yield number, line


def _split_fixed(path: Path, number: int, line: str, n: int) -> list[str]:
    parts = line.split("::")
    if len(parts) != n:
        raise ParseError(str(path), number, f"expected {n} '::'-separated values, got {len(parts)}")
    return parts


def read_movielens(path: str | Path, rating_threshold: float = 3.0) -> RawDataset:
    """Read MovieLens-1M ``ratings.dat``, ``users.dat`` and ``movies.dat``.

    Labels are 1 for ratings >= ``rating_threshold``. Multi-genre movies keep
    their first listed genre; the release year is taken from the title.
    """
    root = Path(path)
    users: dict[str, tuple[str, str, str]] = {}
    users_path = root / "users.dat"
    for number, line in _read_lines(users_path):
        uid, gender, age, occupation, _zip = _split_fixed(users_path, number, line, 5)
        users[uid] = (age, gender, occupation)

    movies: dict[str, tuple[str, str]] = {}
    movies_path = root / "movies.dat"
    for number, line in _read_lines(movies_path):
        mid, title, genres = _split_fixed(movies_path, number, line, 3)
        match = _YEAR.search(title)
        movies[mid] = (genres.split("|")[0], match.group(1) if match else "unknown")

    logs: dict[str, RawUserLog] = {}
    ratings_path = root / "ratings.dat"
    for number, line in _read_lines(ratings_path):
        uid, mid, rating, stamp = _split_fixed(ratings_path, number, line, 4)
        try:
            value = float(rating)
            timestamp = int(stamp)
        except ValueError as e:
            raise ParseError(str(ratings_path), number, str(e)) from e
        if uid not in users:
            raise ParseError(str(ratings_path), number, f"unknown user '{uid}'")
        if mid not in movies:
            raise ParseError(str(ratings_path), number, f"unknown movie '{mid}'")
        log = logs.setdefault(uid, RawUserLog(uid, timestamps=[]))
        log.rows.append((*users[uid], mid, *movies[mid]))
        log.labels.append(int(value >= rating_threshold))
        log.timestamps.append(timestamp)  # type: ignore[union-attr]

    for log in logs.values():
        log.sort_by_time()
    logger.info("Parsed %d MovieLens users from %s", len(logs), root)
    return RawDataset(
        source="movielens",
        key_field=MOVIELENS_SCHEMA[0],
        field_names=MOVIELENS_SCHEMA[1:],
        item_field="movie_id",
        logs=list(logs.values()),
        rating_threshold=rating_threshold,
    )


def read_tabular(
    path: str | Path,
    *,
    source: str = "tabular",
    delimiter: str = ",",
    user_column: str = "user_id",
    item_column: str = "item_id",
    label_column: str = "label",
    timestamp_column: str = "",
    feature_columns: Sequence[str] = (),
) -> RawDataset:
    """Read a pre-labeled delimited file with a header row.

    Every column other than the user, label and timestamp columns is a
    categorical feature unless ``feature_columns`` narrows the set. Labels
    must already be 0 or 1.
    """
    path = Path(path)
    lines = _read_lines(path, encoding="utf-8")
    try:
        _, header_line = next(iter(lines))
    except StopIteration as e:
        raise DataError(f"{path} is empty") from e
    header = next(csv.reader([header_line], delimiter=delimiter))
    reserved = {user_column, label_column, timestamp_column}
    fields = list(feature_columns) or [c for c in header if c not in reserved]
    missing = [c for c in (user_column, label_column, *fields) if c not in header]
    if timestamp_column and timestamp_column not in header:
        missing.append(timestamp_column)
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    if item_column not in fields:
        raise DataError(f"{path}: item column '{item_column}' is not a feature column")
    user_at = header.index(user_column)
    label_at = header.index(label_column)
    field_at = [header.index(c) for c in fields]
    time_at = header.index(timestamp_column) if timestamp_column else None

    logs: dict[str, RawUserLog] = {}
    for number, line in lines:
        values = next(csv.reader([line], delimiter=delimiter))
        if len(values) != len(header):
            raise ParseError(str(path), number, f"expected {len(header)} columns, got {len(values)}")
        label = values[label_at].strip()
        if label not in ("0", "1", "0.0", "1.0"):
            raise ParseError(str(path), number, f"label must be 0 or 1, got '{label}'")
        uid = values[user_at]
        log = logs.setdefault(uid, RawUserLog(uid, timestamps=[] if time_at is not None else None))
        log.rows.append(tuple(values[k] for k in field_at))
        log.labels.append(int(float(label)))
        if time_at is not None:
            try:
                log.timestamps.append(int(float(values[time_at])))  # type: ignore[union-attr]
            except ValueError as e:
                raise ParseError(str(path), number, f"bad timestamp: {e}") from e

    for log in logs.values():
        log.sort_by_time()
    logger.info("Parsed %d users from %s", len(logs), path)
    return RawDataset(
        source=source,
        key_field=user_column,
        field_names=tuple(fields),
        item_field=item_column,
        logs=list(logs.values()),
    )


def filter_cold_items(raw: RawDataset, min_count: int = 100) -> RawDataset:
    """Drop instances of items seen fewer than ``min_count`` times overall.

    Counts are taken once, before filtering; users left empty are dropped.
    """
    counts = raw.item_counts()
    column = raw.field_names.index(raw.item_field)
    kept: list[RawUserLog] = []
    for log in raw.logs:
        keep = [k for k, row in enumerate(log.rows) if counts[row[column]] >= min_count]
        if not keep:
            continue
        kept.append(
            RawUserLog(
                log.user_id,
                rows=[log.rows[k] for k in keep],
                labels=[log.labels[k] for k in keep],
                timestamps=[log.timestamps[k] for k in keep] if log.timestamps is not None else None,
            )
        )
    dropped = sum(1 for c in counts.values() if c < min_count)
    logger.info(
        "Cold-item filter (min %d): dropped %d items, %d -> %d users",
        min_count,
        dropped,
        len(raw.logs),
        len(kept),
    )
    return RawDataset(
        source=raw.source,
        key_field=raw.key_field,
        field_names=raw.field_names,
        item_field=raw.item_field,
        logs=kept,
        rating_threshold=raw.rating_threshold,
    )


def split_users(
    user_ids: Iterable[str], ratio: Sequence[float] = (7, 2, 1), seed: int = 2022
) -> SplitAssignment:
    """Randomly assign users to train/validation/test by ``ratio``.

    Split sizes use largest-remainder rounding, so each is within one user of
    its exact share. The result depends only on the user set and ``seed``.
    """
    users = sorted(set(user_ids))
    if len(users) < 10:
        raise ConfigError(f"need at least 10 users to split, got {len(users)}")
    if len(ratio) != 3 or min(ratio) <= 0:
        raise ConfigError("split ratio needs three positive weights")
    weights = np.asarray(ratio, dtype=np.float64)
    exact = weights / weights.sum() * len(users)
    sizes = np.floor(exact).astype(int)
    for k in np.argsort(-(exact - sizes), kind="stable")[: len(users) - sizes.sum()]:
        sizes[k] += 1
    order = np.random.default_rng(seed).permutation(len(users))
    assignment: dict[str, str] = {}
    bounds = np.cumsum(sizes)
    for rank, k in enumerate(order):
        split = SPLITS[int(np.searchsorted(bounds, rank, side="right"))]
        assignment[users[k]] = split
    return SplitAssignment(assignment)


def encode_logs(raw_logs: Sequence[RawUserLog], space: FeatureSpace) -> list[UserLog]:
    """Map raw token logs onto ``space``; unseen tokens go to the OOV bucket."""
    logs = []
    for raw in raw_logs:
        logs.append(
            UserLog(
                user_id=raw.user_id,
                features=space.encode_rows(raw.rows),
                labels=np.asarray(raw.labels, dtype=np.int8),
                timestamps=np.asarray(raw.timestamps, dtype=np.int64)
                if raw.timestamps is not None
                else None,
            )
        )
    return logs


def parse_movielens(path: str | Path, rating_threshold: float = 3.0) -> tuple[list[UserLog], FeatureSpace]:
    """Read MovieLens-1M and encode it with vocabularies over all users."""
    raw = read_movielens(path, rating_threshold)
    if not raw.logs:
        raise EmptyDatasetError(f"no ratings found under {path}")
    space = FeatureSpace.build(raw.field_names, (row for log in raw.logs for row in log.rows))
    return encode_logs(raw.logs, space), space
