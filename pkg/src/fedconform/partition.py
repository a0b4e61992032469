"""Client dataset construction: synthetic data, silo partitioning, splits.

Three partition regimes emulate institutional silos: ``iid`` assigns
examples uniformly at random, ``class_skew`` draws per-client class
proportions from a symmetric Dirichlet and allocates each class's examples
multinomially across clients, and ``sample_skew`` allocates unequal client
sizes while keeping every client's class mix identical. Each client's
share is then shuffled and split into train/cal/test by the configured
fractions. All randomness flows from one generator seeded by the spec, so
a given (data, spec) pair always yields the same partition.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from fedconform.core import (
    InvalidInputError,
    LabeledExample,
)

PARTITION_KINDS = ("iid", "class_skew", "sample_skew")


class ParseError(ValueError):
    """A CSV dataset file violates the file contract."""


class PartitionDegenerateError(RuntimeError):
    """A client ended up with an empty calibration split."""


@dataclass(frozen=True)
class PartitionSpec:
    """How to carve a dataset into per-client silos and splits."""

    kind: str
    clients: int
    seed: int
    cal_fraction: float = 0.25
    test_fraction: float = 0.25
    dirichlet_beta: float = 1.0
    sample_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in PARTITION_KINDS:
            raise InvalidInputError(
                f"kind must be one of {PARTITION_KINDS}, got {self.kind!r}"
            )
        if self.clients < 2:
            raise InvalidInputError(f"clients must be >= 2, got {self.clients}")
        for name in ("cal_fraction", "test_fraction"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise InvalidInputError(f"{name} must be in (0, 1), got {value}")
        if self.cal_fraction + self.test_fraction >= 1.0:
            raise InvalidInputError("cal_fraction + test_fraction must be < 1")
        if self.dirichlet_beta <= 0.0:
            raise InvalidInputError("dirichlet_beta must be positive")
        if self.sample_weights is not None:
            weights = tuple(float(w) for w in self.sample_weights)
            if len(weights) != self.clients:
                raise InvalidInputError(
                    f"sample_weights needs {self.clients} entries, got {len(weights)}"
                )
            if any(w < 0.0 for w in weights):
                raise InvalidInputError("sample_weights must be nonnegative")
            if abs(sum(weights) - 1.0) > 1e-9:
                raise InvalidInputError("sample_weights must sum to 1")
            object.__setattr__(self, "sample_weights", weights)
        elif self.kind == "sample_skew":
            raise InvalidInputError("sample_skew requires sample_weights")


@dataclass(frozen=True)
class ClientDataset:
    """One client's disjoint train/cal/test splits."""

    client_id: int
    train: list[LabeledExample]
    cal: list[LabeledExample]
    test: list[LabeledExample]


def class_centers(classes: int, dim: int, separation: float) -> np.ndarray:
    """Class centers: separation times C unit vectors evenly spread on the
    plane spanned by the first two coordinate axes."""
    angles = 2.0 * np.pi * np.arange(classes) / classes
    centers = np.zeros((classes, dim))
    centers[:, 0] = np.cos(angles)
    centers[:, 1] = np.sin(angles)
    return separation * centers


def generate_synthetic(
    classes: int, dim: int, per_class: int, separation: float, seed: int
) -> list[LabeledExample]:
    """Sample a Gaussian-mixture dataset with evenly spread class centers.

    Each class contributes ``per_class`` draws from an isotropic
    unit-variance Gaussian at its center. Deterministic given the seed.
    separation=0 collapses every center onto the origin.
    """
    if classes < 2:
        raise InvalidInputError(f"classes must be >= 2, got {classes}")
    if dim < 2:
        raise InvalidInputError(f"dim must be >= 2, got {dim}")
    if per_class < 1:
        raise InvalidInputError(f"per_class must be >= 1, got {per_class}")
    if separation < 0.0:
        raise InvalidInputError(f"separation must be >= 0, got {separation}")
    rng = np.random.default_rng(seed)
    centers = class_centers(classes, dim, separation)
    out: list[LabeledExample] = []
    for label in range(classes):
        draws = rng.standard_normal((per_class, dim)) + centers[label]
        out.extend(LabeledExample(row, label) for row in draws)
    return out


def _largest_remainder(total: int, weights: np.ndarray) -> np.ndarray:
    """Integer allocation of ``total`` proportional to ``weights`` (sum 1).

    Leftover units go to the largest fractional remainders; remainder ties
    resolve to the lower index, keeping the allocation deterministic.
    """
    raw = np.asarray(weights, dtype=np.float64) * total
    counts = np.floor(raw).astype(np.int64)
    order = np.argsort(-(raw - counts), kind="stable")
    short = total - int(counts.sum())
    counts[order[:short]] += 1
    return counts


def _assign_clients(
    data: list[LabeledExample], spec: PartitionSpec, rng: np.random.Generator
) -> list[list[int]]:
    """Index lists, one per client, covering the input exactly once."""
    n = len(data)
    labels = np.fromiter((ex.label for ex in data), dtype=np.int64, count=n)
    assigned: list[list[int]] = [[] for _ in range(spec.clients)]

    if spec.kind == "iid":
        perm = rng.permutation(n)
        sizes = _largest_remainder(n, np.full(spec.clients, 1.0 / spec.clients))
        start = 0
        for k, size in enumerate(sizes):
            assigned[k] = perm[start:start + size].tolist()
            start += size
        return assigned

    # Per-class allocation for both skew regimes.
    if spec.kind == "class_skew":
        # Row k is client k's class-proportion vector from Dirichlet(beta).
        proportions = rng.dirichlet(
            np.full(np.unique(labels).size, spec.dirichlet_beta), size=spec.clients
        )
    for col, label in enumerate(np.unique(labels)):
        idx = rng.permutation(np.flatnonzero(labels == label))
        if spec.kind == "class_skew":
            column = proportions[:, col]
            total = column.sum()
            probs = column / total if total > 0.0 else np.full(spec.clients, 1.0 / spec.clients)
            counts = rng.multinomial(idx.size, probs)
        else:
            counts = _largest_remainder(idx.size, np.asarray(spec.sample_weights))
        start = 0
        for k, count in enumerate(counts):
            assigned[k].extend(idx[start:start + count].tolist())
            start += count
    return assigned


def split_client_data(
    examples: list[LabeledExample],
    client_id: int,
    cal_fraction: float,
    test_fraction: float,
    rng: np.random.Generator,
    require_cal: bool = True,
) -> ClientDataset:
    """Shuffle one client's examples and split them into train/cal/test.

    Cal and test counts are the floors of their fractions; the remainder is
    train. A cal count that floors to zero is bumped to 1 when the client
    has at least 3 examples. Every example is re-tagged with the client id.
    """
    n = len(examples)
    m_cal = math.floor(cal_fraction * n)
    m_test = math.floor(test_fraction * n)
    if m_cal == 0 and n >= 3:
        m_cal = 1
    if require_cal and m_cal == 0:
        raise PartitionDegenerateError(
            f"client {client_id} received {n} examples; calibration split is empty"
        )
    order = rng.permutation(n)
    tagged = [
        dataclasses.replace(examples[i], origin_client=client_id) for i in order
    ]
    return ClientDataset(
        client_id=client_id,
        cal=tagged[:m_cal],
        test=tagged[m_cal:m_cal + m_test],
        train=tagged[m_cal + m_test:],
    )


def partition(
    data: list[LabeledExample], spec: PartitionSpec, require_cal: bool = True
) -> list[ClientDataset]:
    """Assign every example to exactly one client and split per client.

    Deterministic given (data, spec). With ``require_cal`` a client whose
    calibration split would be empty raises PartitionDegenerateError.
    """
    if not data:
        raise InvalidInputError("data must be non-empty")
    rng = np.random.default_rng(spec.seed)
    assigned = _assign_clients(data, spec, rng)
    clients = []
    for k, idx in enumerate(assigned):
        clients.append(
            split_client_data(
                [data[i] for i in idx],
                client_id=k,
                cal_fraction=spec.cal_fraction,
                test_fraction=spec.test_fraction,
                rng=rng,
                require_cal=require_cal,
            )
        )
    return clients


def _csv_header(dim: int) -> list[str]:
    return [f"f{i}" for i in range(dim)] + ["label"]


def load_csv(path) -> list[LabeledExample]:
    """Read the dataset file contract: header f0..f{d-1},label.

    Feature cells are decimal reals, label cells nonnegative integers.
    Labels are remapped to a dense 0-based range preserving their sorted
    original order (e.g. file labels {3, 7} become {0, 1}).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{path}: missing header row")
        dim = len(header) - 1
        if dim < 1 or header != _csv_header(dim):
            raise ParseError(
                f"{path}: header must be f0,...,f{{d-1}},label, got {','.join(header)}"
            )
        rows: list[tuple[np.ndarray, int]] = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != dim + 1:
                raise ParseError(
                    f"{path}: row {lineno}: expected {dim + 1} cells, got {len(row)}"
                )
            try:
                feats = np.array([float(cell) for cell in row[:dim]])
            except ValueError:
                raise ParseError(f"{path}: row {lineno}: unparseable feature cell") from None
            if not np.all(np.isfinite(feats)):
                raise ParseError(f"{path}: row {lineno}: missing or non-finite feature cell")
            try:
                label = int(row[dim])
            except ValueError:
                raise ParseError(f"{path}: row {lineno}: unparseable label cell") from None
            if label < 0:
                raise ParseError(f"{path}: row {lineno}: label must be nonnegative")
            rows.append((feats, label))
    remap = {orig: dense for dense, orig in enumerate(sorted({lab for _, lab in rows}))}
    return [LabeledExample(feats, remap[lab]) for feats, lab in rows]


def write_csv(path, examples: list[LabeledExample]) -> None:
    """Write examples in the dataset file contract (LF line endings)."""
    if not examples:
        raise InvalidInputError("refusing to write an empty dataset")
    dim = examples[0].features.size
    lines = [",".join(_csv_header(dim))]
    for ex in examples:
        if ex.features.size != dim:
            raise InvalidInputError("inconsistent feature lengths")
        lines.append(",".join([repr(float(v)) for v in ex.features] + [str(ex.label)]))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
