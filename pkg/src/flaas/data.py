"""Synthetic dataset generation and per-device partitioning.

Stands in for a real image corpus: Gaussian clusters in raw space, one seeded
mean per class. Partitioning supports a label-skew knob from IID (skew 0) to
dominant-class shards (skew 1).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import derive_seed
from .errors import ConfigurationError


@dataclass(frozen=True)
class Dataset:
    """Raw input rows with class labels; every class present at least once."""

    raw_inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    seed: int = 0

    def __post_init__(self):
        x = np.asarray(self.raw_inputs, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if x.ndim != 2 or len(x) != len(y) or len(y) < 1:
            raise ConfigurationError("raw_inputs and labels must have equal length >= 1")
        present = np.unique(y)
        if present.min() < 0 or present.max() >= self.num_classes:
            raise ConfigurationError("labels out of range")
        if len(present) != self.num_classes:
            raise ConfigurationError("every class must be present at least once")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "raw_inputs", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def raw_dim(self) -> int:
        return self.raw_inputs.shape[1]


@dataclass(frozen=True)
class PartitionSpec:
    """How to split a dataset across simulated devices.

    sizes: one quota for every client (balanced mode uses K copies of S).
    skew in [0, 1]: fraction of each client's quota drawn from its dominant
    classes; the rest is drawn uniformly from whatever remains unassigned.
    """

    sizes: tuple[int, ...]
    skew: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if len(self.sizes) < 1 or any(s < 1 for s in self.sizes):
            raise ConfigurationError("need at least one client, all quotas >= 1")
        if not 0.0 <= self.skew <= 1.0:
            raise ConfigurationError("skew must lie in [0, 1]")
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))

    @classmethod
    def balanced(cls, num_clients: int, samples_per_client: int, skew: float = 0.0, seed: int = 0):
        if num_clients < 1 or samples_per_client < 1:
            raise ConfigurationError("num_clients and samples_per_client must be >= 1")
        return cls(sizes=(samples_per_client,) * num_clients, skew=skew, seed=seed)

    @property
    def num_clients(self) -> int:
        return len(self.sizes)


def generate_synthetic(
    num_classes: int,
    raw_dim: int,
    samples_per_class: int,
    noise_scale: float,
    seed: int,
) -> Dataset:
    """Gaussian clusters: per-class seeded means, points = mean + noise.

    Class means depend only on (seed, num_classes, raw_dim), so datasets of
    different sizes drawn with the same seed describe the same task.
    """
    if num_classes < 1 or raw_dim < 1 or samples_per_class < 1:
        raise ConfigurationError("num_classes, raw_dim, samples_per_class must be >= 1")
    if noise_scale < 0:
        raise ConfigurationError("noise_scale must be >= 0")
    means = np.random.default_rng(derive_seed(seed, "class-means")).standard_normal(
        (num_classes, raw_dim)
    )
    rng = np.random.default_rng(derive_seed(seed, "samples"))
    rows = []
    labels = []
    for c in range(num_classes):
        noise = rng.standard_normal((samples_per_class, raw_dim))
        rows.append(means[c] + noise_scale * noise)
        labels.append(np.full(samples_per_class, c, dtype=np.int64))
    return Dataset(
        raw_inputs=np.concatenate(rows),
        labels=np.concatenate(labels),
        num_classes=num_classes,
        seed=seed,
    )


def partition(dataset: Dataset, spec: PartitionSpec) -> list[np.ndarray]:
    """Split into disjoint per-client index sets of the requested sizes.

    Client k's dominant classes are (k mod C) and (k+1 mod C); the skewed part
    of its quota fills from the first and spills into the second. Exhausted
    dominant pools fall back to the uniform remainder so quotas always come
    out exact. Deterministic in spec.seed.
    """
    if sum(spec.sizes) > len(dataset):
        raise ConfigurationError(
            f"partition needs {sum(spec.sizes)} samples, dataset has {len(dataset)}"
        )
    rng = np.random.default_rng(spec.seed)
    num_classes = dataset.num_classes

    # Pre-shuffled per-class pools, consumed from the tail.
    pools: list[list[int]] = []
    for c in range(num_classes):
        idx = np.flatnonzero(dataset.labels == c)
        pools.append(list(rng.permutation(idx)))

    assignments: list[np.ndarray] = []
    for k, quota in enumerate(spec.sizes):
        taken: list[int] = []
        want_dominant = int(round(spec.skew * quota))
        for c in (k % num_classes, (k + 1) % num_classes):
            grab = min(want_dominant - len(taken), len(pools[c]))
            if grab > 0:
                taken.extend(pools[c][-grab:])
                del pools[c][-grab:]
        remaining = quota - len(taken)
        if remaining > 0:
            sizes = np.array([len(p) for p in pools])
            split = rng.multivariate_hypergeometric(sizes, remaining)
            for c, grab in enumerate(split):
                if grab > 0:
                    taken.extend(pools[c][-grab:])
                    del pools[c][-grab:]
        assignments.append(np.sort(np.array(taken, dtype=np.int64)))
    return assignments


def export_csv(dataset: Dataset, path) -> None:
    """Write the dataset as CSV: header row, feature columns, label last."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(dataset.raw_dim)] + ["label"])
        for row, label in zip(dataset.raw_inputs, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def import_csv(path, num_classes: int | None = None) -> Dataset:
    """Read a dataset written by export_csv; infers num_classes when omitted."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[-1] != "label":
            raise ConfigurationError("CSV must have a header row ending in 'label'")
        rows, labels = [], []
        for record in reader:
            rows.append([float(v) for v in record[:-1]])
            labels.append(int(record[-1]))
    if not rows:
        raise ConfigurationError("CSV contains no data rows")
    inferred = max(labels) + 1 if num_classes is None else num_classes
    return Dataset(
        raw_inputs=np.array(rows), labels=np.array(labels), num_classes=inferred
    )
