"""Client datasets, synthetic Gaussian blobs and CSV import/export."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyDataset, PoolTooSmall

LEFTOVER_ID = "d0"


@dataclass
class ClientDataset:
    """Records held by one client plus the finite candidate pool.

    ``ids[i]`` identifies record ``i``. The candidate pool defaults to the
    record identifiers; every record must belong to it.
    """

    features: np.ndarray
    labels: np.ndarray
    ids: list[str]
    candidate_pool: list[str] = field(default_factory=list)
    n_classes: int = 0

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        self.labels = np.asarray(self.labels, dtype=int).reshape(-1)
        self.ids = [str(i) for i in self.ids]
        if self.features.shape[0] == 0:
            raise EmptyDataset("a client dataset needs at least one record")
        if not (self.features.shape[0] == self.labels.size == len(self.ids)):
            raise ValueError("features, labels and ids must have equal length")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("record identifiers must be unique")
        if LEFTOVER_ID in self.ids:
            raise ValueError(f"identifier {LEFTOVER_ID!r} is reserved for the leftover bucket")
        if not self.candidate_pool:
            self.candidate_pool = list(self.ids)
        missing = set(self.ids) - set(self.candidate_pool)
        if missing:
            raise ValueError(f"records outside the candidate pool: {sorted(missing)[:5]}")
        if not self.n_classes:
            self.n_classes = int(self.labels.max()) + 1

    def __len__(self) -> int:
        return self.labels.size

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def require_pool(self, batch_size: int) -> None:
        if len(self.candidate_pool) < batch_size or len(self) < batch_size:
            raise PoolTooSmall(f"pool of {len(self.candidate_pool)} cannot supply batches of {batch_size}")

    def index_of(self, ident: str) -> int:
        return self.ids.index(ident)


def make_blobs(
    n_per_class: int,
    n_classes: int = 4,
    n_features: int = 2,
    spread: float = 0.6,
    separation: float = 3.0,
    rng: np.random.Generator | int | None = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Isotropic Gaussian blobs with centers on a circle (or a hypercube corner set)."""
    rng = np.random.default_rng(rng)
    if n_features == 2:
        ang = 2 * np.pi * np.arange(n_classes) / n_classes + np.pi / 4
        centers = separation * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    else:
        centers = rng.normal(0.0, separation, size=(n_classes, n_features))
    X = np.concatenate([centers[c] + spread * rng.standard_normal((n_per_class, n_features)) for c in range(n_classes)])
    y = np.repeat(np.arange(n_classes), n_per_class)
    order = rng.permutation(y.size)
    return X[order], y[order]


def make_federated_blobs(
    num_clients: int,
    pool_size: int = 16,
    n_classes: int = 4,
    n_features: int = 2,
    test_size: int = 400,
    spread: float = 0.6,
    separation: float = 3.0,
    seed: int = 0,
) -> tuple[list[ClientDataset], ClientDataset]:
    """Per-client pools of ``pool_size`` records plus a shared held-out set."""
    rng = np.random.default_rng(seed)
    total = num_clients * pool_size + test_size
    per_class = -(-total // n_classes)
    X, y = make_blobs(per_class, n_classes, n_features, spread, separation, rng)
    clients = []
    for k in range(num_clients):
        sl = slice(k * pool_size, (k + 1) * pool_size)
        ids = [f"c{k}-{i:03d}" for i in range(pool_size)]
        clients.append(ClientDataset(X[sl], y[sl], ids, n_classes=n_classes))
    start = num_clients * pool_size
    test = ClientDataset(
        X[start : start + test_size], y[start : start + test_size],
        [f"test-{i:04d}" for i in range(test_size)], n_classes=n_classes,
    )
    return clients, test


def save_csv(path: str | Path, data: ClientDataset) -> None:
    """Write ``id, x0..x{F-1}, label`` rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"] + [f"x{j}" for j in range(data.n_features)] + ["label"])
        for ident, x, label in zip(data.ids, data.features, data.labels):
            writer.writerow([ident] + [repr(float(v)) for v in x] + [int(label)])


def load_csv(path: str | Path, n_classes: int = 0) -> ClientDataset:
    """Read a dataset written by :func:`save_csv`; the ``id`` column is optional."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise EmptyDataset(f"no records in {path}")
    header, body = rows[0], rows[1:]
    has_id = header[0] == "id"
    feat_cols = [i for i, h in enumerate(header) if h not in ("id", "label")]
    label_col = header.index("label") if "label" in header else len(header) - 1
    feats = np.array([[float(r[i]) for i in feat_cols if i != label_col] for r in body])
    labels = np.array([int(r[label_col]) for r in body])
    ids = [r[0] for r in body] if has_id else [f"{path.stem}-{i:04d}" for i in range(len(body))]
    return ClientDataset(feats, labels, ids, n_classes=n_classes)


def concat(datasets: Sequence[ClientDataset]) -> ClientDataset:
    return ClientDataset(
        np.concatenate([d.features for d in datasets]),
        np.concatenate([d.labels for d in datasets]),
        [i for d in datasets for i in d.ids],
        n_classes=max(d.n_classes for d in datasets),
    )
