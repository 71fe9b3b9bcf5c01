"""Canonical dataset bundle: encoded user logs per split plus the feature space.

Bundle layout (little-endian)::

    8 bytes   magic  b"RESUSDS\\0"
    4 bytes   format version (uint32)
    8 bytes   header length (uint64)
    header    UTF-8 JSON (feature space, users, splits), keys sorted
    payload   features int32 (N x F), labels int8 (N), timestamps int64 (N, optional)
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import DataConfig
from .errors import DataError, EmptyDatasetError
from .models import OOV_INDEX, FeatureSpace, FieldSpec, UserLog
from .parser import (
    SPLITS,
    DatasetManifest,
    RawDataset,
    SplitAssignment,
    encode_logs,
    filter_cold_items,
    read_movielens,
    read_tabular,
    split_users,
)

logger = logging.getLogger(__name__)

MAGIC = b"RESUSDS\x00"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Dataset:
    """Encoded user logs grouped by split, sharing one feature space."""

    feature_space: FeatureSpace
    splits: dict[str, list[UserLog]]
    source: str = "tabular"

    @property
    def has_timestamps(self) -> bool:
        logs = [log for split in self.splits.values() for log in split]
        return bool(logs) and all(log.has_timestamps for log in logs)

    def logs(self, split: str) -> list[UserLog]:
        return self.splits.get(split, [])

    def instances(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        """All (features, labels) of a split stacked into two arrays."""
        logs = self.logs(split)
        if not logs:
            raise EmptyDatasetError(f"split '{split}' has no users")
        return (
            np.concatenate([log.features for log in logs]),
            np.concatenate([log.labels for log in logs]),
        )


def build_dataset(raw: RawDataset, assignment: SplitAssignment) -> Dataset:
    """Encode a raw dataset with vocabularies learned from training users only."""
    train_ids = set(assignment.users("train"))
    train_rows = (row for log in raw.logs if log.user_id in train_ids for row in log.rows)
    space = FeatureSpace.build(raw.field_names, train_rows)
    by_split: dict[str, list] = {split: [] for split in SPLITS}
    for log in raw.logs:
        by_split[assignment.assignment[log.user_id]].append(log)
    splits = {split: encode_logs(logs, space) for split, logs in by_split.items()}
    return Dataset(feature_space=space, splits=splits, source=raw.source)


def read_source(cfg: DataConfig) -> RawDataset:
    if cfg.preset == "movielens":
        return read_movielens(cfg.source, cfg.rating_threshold)
    return read_tabular(
        cfg.source,
        source=cfg.preset,
        delimiter=cfg.delimiter,
        user_column=cfg.user_column,
        item_column=cfg.item_column,
        label_column=cfg.label_column,
        timestamp_column=cfg.timestamp_column,
        feature_columns=cfg.feature_columns,
    )


def ingest(cfg: DataConfig) -> tuple[Dataset, DatasetManifest]:
    """Parse, filter, split and encode a source dataset."""
    raw = read_source(cfg)
    if not raw.logs:
        raise EmptyDatasetError(f"no instances parsed from {cfg.source}")
    n_users_raw, n_instances_raw = len(raw.logs), raw.n_instances
    filtered = filter_cold_items(raw, cfg.min_item_interactions)
    if not filtered.logs:
        raise EmptyDatasetError(
            f"no users left after removing items with < {cfg.min_item_interactions} interactions"
        )
    assignment = split_users((log.user_id for log in filtered.logs), cfg.split_ratio, cfg.split_seed)
    dataset = build_dataset(filtered, assignment)

    n_items = len(filtered.item_counts())
    n_instances = filtered.n_instances
    manifest = DatasetManifest(
        source=raw.source,
        schema_fields=raw.schema,
        key_field=raw.key_field,
        item_field=raw.item_field,
        rating_threshold=raw.rating_threshold,
        min_item_interactions=cfg.min_item_interactions,
        split_ratio=list(cfg.split_ratio),
        seed=cfg.split_seed,
        has_timestamps=filtered.has_timestamps,
        n_users_raw=n_users_raw,
        n_instances_raw=n_instances_raw,
        n_users=len(filtered.logs),
        n_items=n_items,
        n_instances=n_instances,
        sparsity=1.0 - n_instances / (len(filtered.logs) * n_items),
        n_feature_fields=len(raw.schema),
        n_features=dataset.feature_space.total_features,
        split_users=assignment.counts(),
        split_instances={s: sum(len(log) for log in dataset.logs(s)) for s in SPLITS},
    )
    logger.info(
        "Ingested %s: %d users, %d items, %d instances, %d features",
        raw.source,
        manifest.n_users,
        manifest.n_items,
        manifest.n_instances,
        manifest.n_features,
    )
    return dataset, manifest


def write_bundle(dataset: Dataset, path: str | Path) -> None:
    """Write ``dataset`` to a deterministic binary bundle."""
    space = dataset.feature_space
    with_time = dataset.has_timestamps
    users = []
    features, labels, stamps = [], [], []
    for split in SPLITS:
        for log in dataset.logs(split):
            users.append({"id": log.user_id, "split": split, "n": len(log)})
            features.append(log.features)
            labels.append(log.labels)
            if with_time:
                stamps.append(log.timestamps)
    header = {
        "source": dataset.source,
        "fields": [{"name": f.name, "vocab_size": f.vocab_size} for f in space.fields],
        "vocab": [sorted(v, key=v.__getitem__) for v in space.vocab],
        "users": users,
        "has_timestamps": with_time,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    n_fields = space.n_fields
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", FORMAT_VERSION, len(blob)))
        f.write(blob)
        empty = np.zeros((0, n_fields))
        f.write(np.concatenate(features or [empty]).astype("<i4").tobytes())
        f.write(np.concatenate(labels or [np.zeros(0)]).astype("<i1").tobytes())
        if with_time:
            f.write(np.concatenate(stamps).astype("<i8").tobytes())


def read_bundle(path: str | Path) -> Dataset:
    """Load a bundle written by :func:`write_bundle`."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset bundle not found: {path}")
    data = path.read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise DataError(f"{path} is not a dataset bundle")
    version, header_len = struct.unpack_from("<IQ", data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported bundle version {version}")
    start = len(MAGIC) + struct.calcsize("<IQ")
    header = json.loads(data[start : start + header_len])
    offset = start + header_len

    fields = tuple(FieldSpec(f["name"], f["vocab_size"]) for f in header["fields"])
    vocab = tuple(
        {token: index for index, token in enumerate(tokens, start=OOV_INDEX + 1)}
        for tokens in header["vocab"]
    )
    space = FeatureSpace(fields=fields, vocab=vocab)
    n = sum(u["n"] for u in header["users"])
    n_fields = len(fields)
    features = np.frombuffer(data, dtype="<i4", count=n * n_fields, offset=offset)
    features = features.reshape(n, n_fields).astype(np.int32)
    offset += features.nbytes
    labels = np.frombuffer(data, dtype="<i1", count=n, offset=offset).astype(np.int8)
    offset += n
    stamps = None
    if header["has_timestamps"]:
        stamps = np.frombuffer(data, dtype="<i8", count=n, offset=offset).astype(np.int64)

    splits: dict[str, list[UserLog]] = {split: [] for split in SPLITS}
    cursor = 0
    for user in header["users"]:
        rows = slice(cursor, cursor + user["n"])
        splits[user["split"]].append(
            UserLog(
                user_id=user["id"],
                features=features[rows].copy(),
                labels=labels[rows].copy(),
                timestamps=stamps[rows].copy() if stamps is not None else None,
            )
        )
        cursor += user["n"]
    return Dataset(feature_space=space, splits=splits, source=header["source"])
