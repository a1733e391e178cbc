"""Synthetic classification tasks, non-IID client partitions, public data.

The task is a Gaussian-blob problem: each class has a fixed center on a
sphere of configurable radius, and samples are the center plus isotropic
noise. Centers depend only on the geometry (class count, input dim), not
on the sampling seed, so train, test, and public splits drawn from
different streams share one task.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import PartitionError, ShapeMismatchError
from .seeds import stream


def class_centers(num_classes: int, input_dim: int, center_radius: float) -> np.ndarray:
    """Fixed per-class centers: pseudo-random unit directions times the radius."""
    rng = stream(0, "centers", num_classes, input_dim)
    raw = rng.standard_normal((num_classes, input_dim))
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0  # total function even for a degenerate draw
    return center_radius * raw / norms


def _index_by_class(labels: np.ndarray) -> dict[int, np.ndarray]:
    index: dict[int, np.ndarray] = {}
    for c in np.unique(labels):
        index[int(c)] = np.flatnonzero(labels == c)
    return index


@dataclass
class Dataset:
    """Inputs, labels, and a row index grouped by class."""

    inputs: np.ndarray  # (n, input_dim)
    labels: np.ndarray  # (n,) int64
    num_classes: int
    class_index: dict[int, np.ndarray] = field(init=False)

    def __post_init__(self) -> None:
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        _check_rows(self.inputs, self.labels)
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels out of class range")
        self.class_index = _index_by_class(self.labels)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, rows: np.ndarray) -> "Dataset":
        return Dataset(self.inputs[rows], self.labels[rows], self.num_classes)


@dataclass
class PublicDataset(Dataset):
    """Server-held auxiliary data covering a subset of classes."""

    @property
    def covered_classes(self) -> frozenset[int]:
        return frozenset(self.class_index)


@dataclass
class Partition:
    """Disjoint per-client row assignments into a source dataset."""

    assignments: list[np.ndarray]

    def client_rows(self, client_id: int) -> np.ndarray:
        return self.assignments[client_id]

    @property
    def num_clients(self) -> int:
        return len(self.assignments)


def _check_rows(inputs: np.ndarray, labels: np.ndarray) -> None:
    if inputs.ndim != 2:
        raise ShapeMismatchError("input rank", 2, inputs.ndim)
    if inputs.shape[0] != labels.shape[0]:
        raise ShapeMismatchError("rows", inputs.shape[0], labels.shape[0])


def gen_blobs(
    num_classes: int,
    per_class_n: int,
    input_dim: int,
    center_radius: float,
    noise_std: float,
    seed: int,
) -> Dataset:
    """Sample per_class_n points around every class center, class-major order."""
    if num_classes < 1 or per_class_n < 1 or input_dim < 1:
        raise ValueError("counts must be >= 1")
    if noise_std < 0 or center_radius <= 0:
        raise ValueError("noise_std must be >= 0 and center_radius > 0")
    centers = class_centers(num_classes, input_dim, center_radius)
    rng = np.random.Generator(np.random.PCG64(seed))
    inputs = np.empty((num_classes * per_class_n, input_dim))
    labels = np.empty(num_classes * per_class_n, dtype=np.int64)
    for c in range(num_classes):
        block = slice(c * per_class_n, (c + 1) * per_class_n)
        inputs[block] = centers[c] + noise_std * rng.standard_normal((per_class_n, input_dim))
        labels[block] = c
    return Dataset(inputs, labels, num_classes)


def _split_counts(total: int, proportions: np.ndarray) -> np.ndarray:
    """Integer split of ``total`` matching ``proportions``, largest remainder first."""
    raw = proportions * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        frac = raw - counts
        # stable sort so remainder ties go to the lowest client id
        order = np.argsort(-frac, kind="stable")
        counts[order[:short]] += 1
    return counts


def dirichlet_partition(
    dataset: Dataset,
    num_clients: int,
    alpha: float,
    seed: int,
    max_attempts: int = 20,
) -> Partition:
    """Split every class across clients with Dir(alpha) proportions.

    Counts use largest-remainder rounding so they conserve exactly. If any
    client ends up empty the whole draw is resampled with fresh seed
    material, up to ``max_attempts`` times.
    """
    if num_clients < 1:
        raise ValueError("num_clients must be >= 1")
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    for attempt in range(max_attempts):
        rng = np.random.default_rng((seed, attempt))
        per_client: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
        for c in sorted(dataset.class_index):
            rows = dataset.class_index[c]
            proportions = rng.dirichlet(np.full(num_clients, alpha))
            counts = _split_counts(len(rows), proportions)
            start = 0
            for k in range(num_clients):
                per_client[k].append(rows[start : start + counts[k]])
                start += counts[k]
        assignments = [
            np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int64)
            for chunks in per_client
        ]
        if all(len(a) > 0 for a in assignments):
            return Partition(assignments)
    raise PartitionError(
        f"could not give every one of {num_clients} clients at least one row in "
        f"{max_attempts} attempts; use a larger dataset or a larger alpha"
    )


def build_public(
    num_classes: int,
    input_dim: int,
    center_radius: float,
    noise_std: float,
    covered_classes: frozenset[int] | set[int],
    per_class_n: int,
    seed: int,
) -> PublicDataset:
    """Fresh samples for exactly the covered classes (distinct RNG stream)."""
    covered = sorted(covered_classes)
    if any(c < 0 or c >= num_classes for c in covered):
        raise ValueError("covered_classes must be a subset of all classes")
    if per_class_n < 1:
        raise ValueError("per_class_n must be >= 1")
    centers = class_centers(num_classes, input_dim, center_radius)
    rng = np.random.Generator(np.random.PCG64(seed))
    inputs = np.empty((len(covered) * per_class_n, input_dim))
    labels = np.empty(len(covered) * per_class_n, dtype=np.int64)
    for slot, c in enumerate(covered):
        block = slice(slot * per_class_n, (slot + 1) * per_class_n)
        inputs[block] = centers[c] + noise_std * rng.standard_normal((per_class_n, input_dim))
        labels[block] = c
    return PublicDataset(inputs, labels, num_classes)


def export_dataset(path: str, dataset: Dataset) -> None:
    """Write one sample per line: features..., label. Floats survive round-trip."""
    dim = dataset.inputs.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(dim)] + ["label"])
        for row, label in zip(dataset.inputs, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def import_dataset(path: str, num_classes: int) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = len(header) - 1
        inputs, labels = [], []
        for line in reader:
            inputs.append([float(v) for v in line[:dim]])
            labels.append(int(line[dim]))
    block = np.array(inputs, dtype=np.float64).reshape(len(labels), dim)
    return Dataset(block, np.array(labels, dtype=np.int64), num_classes)


def export_partition(path: str, partition: Partition) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["client_id", "row_index"])
        for k, rows in enumerate(partition.assignments):
            for r in rows:
                writer.writerow([k, int(r)])


def import_partition(path: str) -> Partition:
    by_client: dict[int, list[int]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for line in reader:
            by_client.setdefault(int(line[0]), []).append(int(line[1]))
    if not by_client:
        return Partition([])
    count = max(by_client) + 1
    return Partition(
        [np.array(by_client.get(k, []), dtype=np.int64) for k in range(count)]
    )
