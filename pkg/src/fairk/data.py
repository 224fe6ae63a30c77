"""Datasets, Dirichlet client partitioning and mini-batch sampling."""
from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from .errors import PartitionError

_IDX_DTYPES = {
    0x08: np.uint8, 0x09: np.int8, 0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"), 0x0D: np.dtype(">f4"), 0x0E: np.dtype(">f8"),
}


@dataclass
class Dataset:
    """Features plus targets. ``groups`` are the labels used for partitioning;
    for classification they are the labels themselves."""

    X: np.ndarray
    y: np.ndarray
    groups: Optional[np.ndarray] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y)
        if self.groups is None:
            self.groups = self.y
        if len(self.X) != len(self.y):
            raise ValueError(f"{len(self.X)} feature rows but {len(self.y)} labels")

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.groups[idx])


@dataclass
class ClientDataset:
    features: np.ndarray
    labels: np.ndarray
    batch_size: int

    def __post_init__(self):
        if len(self.labels) < 1:
            raise ValueError("client dataset is empty")
        # clients smaller than the nominal batch train on their full set
        self.batch_size = max(1, min(self.batch_size, len(self.labels)))

    def __len__(self):
        return len(self.labels)


class MiniBatchSampler:
    """Epoch-wise sampling without replacement, reshuffled every epoch."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n, self.batch_size, self.rng = n, batch_size, rng
        self._perm = np.empty(0, dtype=np.int64)
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos + self.batch_size > self._perm.size:
            self._perm = self.rng.permutation(self.n)
            self._pos = 0
        idx = self._perm[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return idx


def dirichlet_partition(labels, num_clients: int, dir_alpha: float, seed=None,
                        max_retries: int = 100) -> List[np.ndarray]:
    """Split sample indices over clients with per-class Dirichlet proportions.

    Any draw that leaves a client empty is discarded and redrawn.
    """
    if num_clients < 1:
        raise ValueError("need at least one client")
    if not dir_alpha > 0:
        raise ValueError(f"dir_alpha must be positive, got {dir_alpha}")
    labels = np.asarray(labels)
    if labels.size < num_clients:
        raise PartitionError(f"{labels.size} samples cannot fill {num_clients} clients")
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    for _ in range(max_retries + 1):
        parts: List[list] = [[] for _ in range(num_clients)]
        for c in classes:
            idx = rng.permutation(np.flatnonzero(labels == c))
            props = rng.dirichlet(np.full(num_clients, dir_alpha))
            cuts = (np.cumsum(props)[:-1] * idx.size).astype(int)
            for n, chunk in enumerate(np.split(idx, cuts)):
                parts[n].extend(chunk.tolist())
        if all(parts):
            return [np.sort(np.asarray(p, dtype=np.int64)) for p in parts]
    raise PartitionError(
        f"some client stayed empty after {max_retries} redraws "
        f"(N={num_clients}, alpha={dir_alpha}, samples={labels.size})"
    )


# --- sources -----------------------------------------------------------------

def load_digits_split(test_fraction: float = 0.2, seed=0):
    """The 8x8 handwritten digits set (10 classes), scaled to [0, 1]."""
    from sklearn.datasets import load_digits

    X, y = load_digits(return_X_y=True)
    return train_test_split(Dataset(X / 16.0, y.astype(np.int64)), test_fraction, seed)


def train_test_split(data: Dataset, test_fraction: float, seed=0):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(data))
    n_test = int(round(test_fraction * len(data)))
    return data.subset(np.sort(perm[n_test:])), data.subset(np.sort(perm[:n_test]))


def make_synthetic_classification(n: int, num_features: int, num_classes: int,
                                  separation: float = 2.0, seed=0) -> Dataset:
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, separation / np.sqrt(num_features), (num_classes, num_features))
    y = rng.integers(num_classes, size=n)
    X = centers[y] + rng.normal(0.0, 1.0 / np.sqrt(num_features), (n, num_features))
    return Dataset(X, y.astype(np.int64))


def make_synthetic_regression(n: int, num_features: int, num_groups: int = 10,
                              noise: float = 0.1, seed=0) -> Dataset:
    """Linear-regression data with group-dependent feature means.

    Groups play the role of classes for Dirichlet partitioning so that
    clients see differently located quadratic objectives.
    """
    rng = np.random.default_rng(seed)
    w_true = rng.normal(0.0, 1.0, num_features)
    # heavy-tailed feature scales make gradient magnitudes persistently uneven
    scales = rng.pareto(2.0, num_features) + 0.1
    means = rng.normal(0.0, 1.0, (num_groups, num_features))
    groups = rng.integers(num_groups, size=n)
    X = (means[groups] + rng.normal(0.0, 1.0, (n, num_features))) * scales / np.sqrt(num_features)
    y = X @ w_true + noise * rng.normal(size=n)
    return Dataset(X, y, groups.astype(np.int64))


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Read an IDX array file (the MNIST container format), optionally gzipped."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise ValueError(f"{path}: not an IDX file (bad magic)")
    code, ndim = raw[2], raw[3]
    if code not in _IDX_DTYPES:
        raise ValueError(f"{path}: unknown IDX type code 0x{code:02x}")
    shape = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    dtype = np.dtype(_IDX_DTYPES[code])
    body = np.frombuffer(raw, dtype=dtype, offset=4 + 4 * ndim)
    if body.size != int(np.prod(shape)):
        raise ValueError(f"{path}: expected {int(np.prod(shape))} items, found {body.size}")
    return body.reshape(shape).astype(dtype.newbyteorder("="))


def write_idx(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    code = {np.dtype(np.uint8): 0x08, np.dtype(np.int8): 0x09, np.dtype(np.int16): 0x0B,
            np.dtype(np.int32): 0x0C, np.dtype(np.float32): 0x0D, np.dtype(np.float64): 0x0E}[arr.dtype]
    with open(path, "wb") as fh:
        fh.write(bytes([0, 0, code, arr.ndim]))
        fh.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        fh.write(arr.astype(arr.dtype.newbyteorder(">")).tobytes())


def load_idx_pair(images, labels, scale: float = 255.0) -> Dataset:
    X = read_idx(images).astype(float)
    X = X.reshape(X.shape[0], -1) / scale
    return Dataset(X, read_idx(labels).astype(np.int64))


def load_csv(path, label_column: int = -1, classification: bool = True) -> Dataset:
    """Numeric CSV, one sample per row; a non-numeric first row is taken as header."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    try:
        float(rows[0][label_column])
    except ValueError:
        rows = rows[1:]
    arr = np.asarray(rows, dtype=float)
    y = arr[:, label_column]
    X = np.delete(arr, label_column % arr.shape[1], axis=1)
    return Dataset(X, y.astype(np.int64) if classification else y)
