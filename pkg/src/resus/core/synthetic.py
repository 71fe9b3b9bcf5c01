"""Synthetic click logs with a learnable shared part and per-user residuals."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from scipy.special import expit

from .parser import RawDataset, RawUserLog

FIELDS = ("age", "region", "item_id", "category")


def make_synthetic_logs(
    n_users: int = 200,
    n_items: int = 60,
    n_categories: int = 6,
    min_history: int = 8,
    max_history: int = 60,
    latent_dim: int = 4,
    user_strength: float = 1.5,
    seed: int = 0,
) -> RawDataset:
    """Generate timestamped logs.

    The click logit of user u on item i is ``a_i + g(age_u, cat_i) + s·<p_u, q_i>``:
    an item effect and a demographic/category interaction every user shares,
    plus a latent per-user preference scaled by ``user_strength`` that only a
    user's own history reveals.
    """
    rng = np.random.default_rng(seed)
    item_effect = rng.normal(0.0, 1.0, n_items)
    item_category = rng.integers(0, n_categories, n_items)
    item_latent = rng.normal(0.0, 1.0, (n_items, latent_dim)) / np.sqrt(latent_dim)
    ages = ("18", "25", "35", "45", "56")
    age_taste = rng.normal(0.0, 0.8, (len(ages), n_categories))
    popularity = expit(item_effect) + 0.2
    popularity /= popularity.sum()

    logs = []
    for u in range(n_users):
        age = int(rng.integers(len(ages)))
        region = f"r{rng.integers(4)}"
        taste = rng.normal(0.0, 1.0, latent_dim)
        n = int(rng.integers(min_history, max_history + 1))
        items = rng.choice(n_items, size=n, p=popularity)
        logit = (
            item_effect[items]
            + age_taste[age, item_category[items]]
            + user_strength * item_latent[items] @ taste
        )
        labels = (rng.random(n) < expit(logit)).astype(int)
        start = int(rng.integers(0, 10_000))
        stamps = start + np.cumsum(rng.integers(1, 600, n))
        log = RawUserLog(
            user_id=f"u{u:04d}",
            rows=[(ages[age], region, f"i{i:03d}", f"c{item_category[i]}") for i in items],
            labels=labels.tolist(),
            timestamps=stamps.tolist(),
        )
        logs.append(log)
    return RawDataset(
        source="tabular",
        key_field="user_id",
        field_names=FIELDS,
        item_field="item_id",
        logs=logs,
    )


def write_tabular(raw: RawDataset, path: str | Path) -> None:
    """Write a raw dataset as a CSV readable by ``read_tabular``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with_time = raw.has_timestamps
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow([raw.key_field, *raw.field_names, "label"] + (["timestamp"] if with_time else []))
        for log in raw.logs:
            for k, row in enumerate(log.rows):
                stamp = [log.timestamps[k]] if with_time else []  # type: ignore[index]
                writer.writerow([log.user_id, *row, log.labels[k], *stamp])
