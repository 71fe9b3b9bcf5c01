"""Data models for CTR instances, user logs and meta-learning tasks."""

from __future__ import annotations

from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError, EncodingError, InsufficientHistoryError

OOV_INDEX = 0
OOV_TOKEN = "<oov>"


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class FieldSpec:
    """One categorical feature field."""

    name: str
    vocab_size: int


@dataclass(frozen=True)
class FeatureSpace:
    """Field schema plus per-field token vocabularies.

    Index 0 of every field is the out-of-vocabulary bucket; known tokens map
    to 1..vocab_size-1.
    """

    fields: tuple[FieldSpec, ...]
    vocab: tuple[Mapping[str, int], ...]

    @classmethod
    def build(
        cls, field_names: Sequence[str], rows: Iterator[Sequence[str]] | Sequence[Sequence[str]]
    ) -> FeatureSpace:
        """Build vocabularies from token rows, in first-seen order per field."""
        vocabs: list[dict[str, int]] = [{} for _ in field_names]
        for row in rows:
            for vocab, token in zip(vocabs, row):
                if token not in vocab:
                    vocab[token] = len(vocab) + 1
        fields = tuple(
            FieldSpec(name, len(vocab) + 1) for name, vocab in zip(field_names, vocabs)
        )
        return cls(fields=fields, vocab=tuple(vocabs))

    @property
    def n_fields(self) -> int:
        return len(self.fields)

    @property
    def field_names(self) -> list[str]:
        return [f.name for f in self.fields]

    @property
    def total_features(self) -> int:
        return sum(f.vocab_size for f in self.fields)

    @cached_property
    def offsets(self) -> np.ndarray:
        """Start row of each field in a flat embedding table."""
        sizes = [f.vocab_size for f in self.fields]
        return _frozen(np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64))

    @cached_property
    def _inverse(self) -> tuple[dict[int, str], ...]:
        return tuple({i: t for t, i in vocab.items()} for vocab in self.vocab)

    def encode(self, tokens: Sequence[str]) -> tuple[int, ...]:
        if len(tokens) != self.n_fields:
            raise EncodingError(f"expected {self.n_fields} tokens, got {len(tokens)}")
        return tuple(vocab.get(t, OOV_INDEX) for vocab, t in zip(self.vocab, tokens))

    def encode_rows(self, rows: Sequence[Sequence[str]]) -> np.ndarray:
        out = np.zeros((len(rows), self.n_fields), dtype=np.int32)
        for j, vocab in enumerate(self.vocab):
            out[:, j] = [vocab.get(row[j], OOV_INDEX) for row in rows]
        return out

    def decode(self, indices: Sequence[int]) -> tuple[str, ...]:
        self.validate(np.asarray(indices)[None, :])
        return tuple(
            inverse.get(int(i), OOV_TOKEN) for inverse, i in zip(self._inverse, indices)
        )

    def validate(self, features: np.ndarray) -> None:
        """Raise EncodingError if any index is outside its field range."""
        if features.ndim != 2 or features.shape[1] != self.n_fields:
            raise EncodingError(
                f"feature matrix shape {features.shape} does not match {self.n_fields} fields"
            )
        sizes = np.array([f.vocab_size for f in self.fields])
        bad = (features < 0) | (features >= sizes)
        if bad.any():
            row, col = np.argwhere(bad)[0]
            raise EncodingError(
                f"index {features[row, col]} out of range for field "
                f"'{self.fields[col].name}' (vocab size {sizes[col]})"
            )


@dataclass(frozen=True)
class Instance:
    """One CTR record: field indices, binary label, optional timestamp."""

    field_indices: tuple[int, ...]
    label: int
    timestamp: int | None = None


@dataclass(frozen=True, eq=False)
class UserLog:
    """All observed instances of one user, stored column-wise.

    ``features`` is (n, F) int, ``labels`` is (n,) int8 and ``timestamps`` is
    (n,) int64 or None. When timestamps exist the rows are sorted by time.
    """

    user_id: str
    features: np.ndarray
    labels: np.ndarray
    timestamps: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.features.shape[0] != self.labels.shape[0]:
            raise EncodingError(
                f"user {self.user_id}: {self.features.shape[0]} rows but "
                f"{self.labels.shape[0]} labels"
            )
        if self.timestamps is not None and np.any(np.diff(self.timestamps) < 0):
            raise EncodingError(f"user {self.user_id}: instances not sorted by time")
        for array in (self.features, self.labels, self.timestamps):
            if array is not None:
                _frozen(array)

    @classmethod
    def from_instances(cls, user_id: str, instances: Sequence[Instance]) -> UserLog:
        stamps = [i.timestamp for i in instances]
        has_time = bool(instances) and all(s is not None for s in stamps)
        order = np.argsort(stamps, kind="stable") if has_time else np.arange(len(instances))
        ordered = [instances[k] for k in order]
        n_fields = len(instances[0].field_indices) if instances else 0
        return cls(
            user_id=user_id,
            features=np.array(
                [i.field_indices for i in ordered], dtype=np.int32
            ).reshape(len(ordered), n_fields),
            labels=np.array([i.label for i in ordered], dtype=np.int8),
            timestamps=np.array([i.timestamp for i in ordered], dtype=np.int64)
            if has_time
            else None,
        )

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def has_timestamps(self) -> bool:
        return self.timestamps is not None

    def instance(self, position: int) -> Instance:
        return Instance(
            field_indices=tuple(int(v) for v in self.features[position]),
            label=int(self.labels[position]),
            timestamp=int(self.timestamps[position]) if self.timestamps is not None else None,
        )

    @property
    def instances(self) -> list[Instance]:
        return [self.instance(k) for k in range(len(self))]


@dataclass(frozen=True, eq=False)
class Task:
    """A (support, query) pair for one user, referencing rows of its log."""

    user_id: str
    support_x: np.ndarray
    support_y: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray
    support_positions: np.ndarray = field(repr=False)
    query_positions: np.ndarray = field(repr=False)

    @property
    def support_size(self) -> int:
        return int(self.support_y.shape[0])

    @property
    def query_size(self) -> int:
        return int(self.query_y.shape[0])

    def support(self, log: UserLog) -> list[Instance]:
        return [log.instance(int(p)) for p in self.support_positions]

    def query(self, log: UserLog) -> list[Instance]:
        return [log.instance(int(p)) for p in self.query_positions]


@dataclass(frozen=True)
class ColdnessConfig:
    """Cold-user threshold and the three evaluation stages.

    ``stage_bounds`` holds three inclusive (low, high) ranges of support
    sizes; ``step`` is the spacing of evaluated sizes inside them.
    """

    tau: int = 30
    stage_bounds: tuple[tuple[int, int], ...] = ((1, 10), (11, 20), (21, 30))
    step: int = 1

    def __post_init__(self) -> None:
        sizes = [s for lo, hi in self.stage_bounds for s in range(lo, hi + 1, self.step)]
        if len(set(sizes)) != len(sizes):
            raise ConfigError("cold-start stages overlap")
        if max(sizes, default=0) > self.tau:
            raise ConfigError("cold-start stages exceed tau")

    @classmethod
    def for_dataset(cls, preset: str) -> ColdnessConfig:
        if preset == "taobao":
            return cls(tau=150, stage_bounds=((10, 50), (60, 100), (110, 150)), step=10)
        return cls()

    @property
    def stage_names(self) -> list[str]:
        return ["I", "II", "III"][: len(self.stage_bounds)]

    def sizes(self) -> list[int]:
        return [s for lo, hi in self.stage_bounds for s in range(lo, hi + 1, self.step)]

    def stage_sizes(self, stage: str) -> list[int]:
        lo, hi = self.stage_bounds[self.stage_names.index(stage)]
        return list(range(lo, hi + 1, self.step))

    def stage_of(self, size: int) -> str | None:
        for name, (lo, hi) in zip(self.stage_names, self.stage_bounds):
            if lo <= size <= hi and (size - lo) % self.step == 0:
                return name
        return None


def split_by_label(log: UserLog) -> tuple[list[Instance], list[Instance]]:
    """Partition a log into positive and negative instances, keeping order."""
    positives = [log.instance(int(k)) for k in np.flatnonzero(log.labels == 1)]
    negatives = [log.instance(int(k)) for k in np.flatnonzero(log.labels != 1)]
    return positives, negatives


def make_task(
    log: UserLog,
    support_size: int,
    time_ordered: bool,
    rng: np.random.Generator | int | None = None,
) -> Task:
    """Split a user log into support and query sets.

    Time-ordered tasks take the earliest ``support_size`` rows as support;
    otherwise the support rows are drawn uniformly without replacement from
    ``rng`` (a generator or a seed). The query set is always the remainder.
    """
    n = len(log)
    if support_size < 1 or support_size >= n:
        raise InsufficientHistoryError(
            f"user {log.user_id}: support size {support_size} needs more than "
            f"{support_size} instances, log has {n}"
        )
    if time_ordered:
        support = np.arange(support_size)
    else:
        generator = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        support = np.sort(generator.choice(n, size=support_size, replace=False))
    mask = np.ones(n, dtype=bool)
    mask[support] = False
    query = np.flatnonzero(mask)
    return Task(
        user_id=log.user_id,
        support_x=log.features[support],
        support_y=log.labels[support],
        query_x=log.features[query],
        query_y=log.labels[query],
        support_positions=support,
        query_positions=query,
    )
