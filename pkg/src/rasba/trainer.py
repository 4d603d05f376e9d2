"""Desk-scale federated training.

A multinomial logistic regression on Gaussian blobs stands in for the image
models: it is cheap, convex and has an exact gradient, which is all the
batch-size experiments need.  Parameters are a flat vector laid out as the
``K x d`` weight matrix (row-major) followed by ``K`` biases.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import streams


class TrainingDiverged(RuntimeError):
    """Raised when the loss stops being finite."""


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise ValueError("features must be 2-D and labels 1-D")
        if len(self.features) != len(self.labels):
            raise ValueError(f"{len(self.features)} feature rows but {len(self.labels)} labels")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        missing = set(range(self.n_classes)) - set(np.unique(self.labels).tolist())
        if missing:
            raise ValueError(f"classes {sorted(missing)} have no samples")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.features[idx], self.labels[idx]


@dataclass(frozen=True)
class PartitionSpec:
    alpha: float
    m: int
    min_shard: int = 1

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.m < 1 or self.min_shard < 1:
            raise ValueError("m and min_shard must be >= 1")


def class_centers(n_classes: int, n_features: int, margin: float, seed: int) -> np.ndarray:
    rng = streams.stream(seed, streams.DATA)
    centers = rng.standard_normal((n_classes, n_features))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    return margin * centers


def make_blobs(n: int, centers: np.ndarray, rng: np.random.Generator, seed: int | None = None) -> Dataset:
    """Isotropic unit-variance blobs around ``centers`` with balanced classes."""
    k, d = centers.shape
    if n < k:
        raise ValueError(f"need at least one sample per class ({k}), got n={n}")
    labels = rng.permutation(np.arange(n) % k)
    features = centers[labels] + rng.standard_normal((n, d))
    return Dataset(features, labels, k, seed)


def synthetic_task(
    n_train: int = 10_000,
    n_test: int = 2_000,
    n_classes: int = 10,
    n_features: int = 32,
    margin: float = 5.0,
    seed: int = 0,
) -> tuple[Dataset, Dataset]:
    centers = class_centers(n_classes, n_features, margin, seed)
    train = make_blobs(n_train, centers, streams.stream(seed, streams.DATA, 1), seed)
    test = make_blobs(n_test, centers, streams.stream(seed, streams.TEST_DATA), seed)
    return train, test


def load_csv_dataset(features_path: str | Path, labels_path: str | Path, n_classes: int | None = None) -> Dataset:
    """Read a feature CSV (n rows x d reals) and a label CSV (n integers)."""
    features = np.loadtxt(features_path, delimiter=",", ndmin=2, dtype=np.float64)
    labels = np.loadtxt(labels_path, delimiter=",", ndmin=1, dtype=np.int64)
    k = int(labels.max()) + 1 if n_classes is None else n_classes
    return Dataset(features, labels, k)


def dirichlet_partition(dataset: Dataset, spec: PartitionSpec, rng: np.random.Generator) -> list[np.ndarray]:
    """Split sample indices across ``spec.m`` clients, class by class.

    Each class is divided according to a Dirichlet(alpha) draw using
    largest-remainder rounding.  Shards that end up below ``min_shard`` are
    topped up from the currently largest shard.
    """
    n, m = len(dataset), spec.m
    if n < m * spec.min_shard:
        raise ValueError(f"{n} samples cannot give {m} clients at least {spec.min_shard} each")

    shards: list[list[int]] = [[] for _ in range(m)]
    for k in range(dataset.n_classes):
        idx = np.flatnonzero(dataset.labels == k)
        idx = idx[rng.permutation(len(idx))]
        share = rng.dirichlet(np.full(m, spec.alpha)) * len(idx)
        counts = np.floor(share).astype(np.int64)
        leftover = len(idx) - int(counts.sum())
        if leftover:
            # ties go to the lower client id
            order = np.argsort(-(share - counts), kind="stable")
            counts[order[:leftover]] += 1
        start = 0
        for c, cnt in enumerate(counts):
            shards[c].extend(idx[start:start + cnt].tolist())
            start += cnt

    sizes = np.array([len(s) for s in shards])
    while sizes.min() < spec.min_shard:
        small, big = int(np.argmin(sizes)), int(np.argmax(sizes))
        move = min(spec.min_shard - sizes[small], sizes[big] - spec.min_shard)
        shards[small].extend(shards[big][-move:])
        del shards[big][-move:]
        sizes[small] += move
        sizes[big] -= move
    return [np.sort(np.asarray(s, dtype=np.int64)) for s in shards]


def n_params(n_classes: int, n_features: int) -> int:
    return n_classes * n_features + n_classes


def init_params(n_classes: int, n_features: int) -> np.ndarray:
    return np.zeros(n_params(n_classes, n_features))


def _unpack(params: np.ndarray, n_classes: int, n_features: int) -> tuple[np.ndarray, np.ndarray]:
    if params.shape != (n_params(n_classes, n_features),):
        raise ValueError(f"parameter vector has shape {params.shape}, expected ({n_params(n_classes, n_features)},)")
    w = params[: n_classes * n_features].reshape(n_classes, n_features)
    return w, params[n_classes * n_features:]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grad(params: np.ndarray, x: np.ndarray, y: np.ndarray, n_classes: int) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over the batch and its gradient."""
    w, b = _unpack(params, n_classes, x.shape[1])
    logp = _log_softmax(x @ w.T + b)
    n = len(y)
    loss = -float(logp[np.arange(n), y].mean())
    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    return loss, np.concatenate([(delta.T @ x).ravel(), delta.sum(axis=0)])


def local_train(
    params: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    batch_size: int,
    epochs: int,
    lr: float,
    rng: np.random.Generator,
    n_classes: int,
) -> np.ndarray:
    """Plain mini-batch SGD.  The short final batch of an epoch is kept."""
    n = len(y)
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch size {batch_size} outside [1, {n}]")
    if epochs < 1 or lr < 0:
        raise ValueError("epochs must be >= 1 and lr >= 0")
    params = params.copy()
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = order[start:start + batch_size]
            loss, grad = loss_and_grad(params, x[batch], y[batch], n_classes)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss {loss} at batch size {batch_size}, lr {lr}")
            params -= lr * grad
    return params


def fedavg(updates: Sequence[tuple[np.ndarray, int]]) -> np.ndarray:
    """Sample-weighted mean, reduced in the order given (callers sort by client id)."""
    if not updates:
        raise ValueError("fedavg needs at least one update")
    dim = updates[0][0].shape
    total = 0
    for p, count in updates:
        if p.shape != dim:
            raise ValueError(f"dimension mismatch: {p.shape} vs {dim}")
        if count < 0:
            raise ValueError("sample counts must be non-negative")
        total += count
    if total == 0:
        raise ValueError("total weight is zero")
    out = np.zeros(dim)
    for p, count in updates:
        out += (count / total) * p
    return out


def evaluate(params: np.ndarray, test: Dataset) -> tuple[float, float]:
    """Mean cross-entropy and top-1 accuracy."""
    if len(test) == 0:
        raise ValueError("empty test set")
    w, b = _unpack(params, test.n_classes, test.n_features)
    logits = test.features @ w.T + b
    logp = _log_softmax(logits)
    loss = -float(logp[np.arange(len(test)), test.labels].mean())
    acc = float((logits.argmax(axis=1) == test.labels).mean())
    return loss, acc


class FederatedTask:
    """Binds a partitioned dataset to the training hyperparameters."""

    def __init__(self, train: Dataset, test: Dataset, shards: Sequence[np.ndarray],
                 lr: float = 0.1, epochs: int = 1):
        if train.n_features != test.n_features or train.n_classes != test.n_classes:
            raise ValueError("train and test sets describe different tasks")
        self.train_set = train
        self.test_set = test
        self.shards = [np.asarray(s) for s in shards]
        self.lr = lr
        self.epochs = epochs

    @property
    def shard_sizes(self) -> list[int]:
        return [len(s) for s in self.shards]

    def init_model(self) -> np.ndarray:
        return init_params(self.train_set.n_classes, self.train_set.n_features)

    def train(self, client_id: int, params: np.ndarray, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        x, y = self.train_set.subset(self.shards[client_id])
        return local_train(params, x, y, batch_size, self.epochs, self.lr, rng, self.train_set.n_classes)

    def evaluate(self, params: np.ndarray) -> tuple[float, float]:
        return evaluate(params, self.test_set)
