"""Metrics and sweep drivers over method, alpha, k, and partition regime.

``run_experiment`` executes the whole pipeline deterministically from the
three configured seeds (data, partition, training): generate or load the
dataset, partition it into client silos, train the shared model, calibrate
every client, then evaluate each requested (method, alpha, k) cell on the
pooled test set of all clients. Evaluation itself draws no randomness.

Coverage is reported marginally over the pooled test set with per-client
and per-class breakdowns attached to every row; the breakdowns' weighted
average reproduces the marginal value exactly.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from fedconform.config import ExperimentConfig, config_digest
from fedconform.conformal import CalibrationState, calibrate_client
from fedconform.core import (
    DimensionError,
    InvalidInputError,
    LabeledExample,
    stack_examples,
)
from fedconform.fedtrain import MLPClassifier, fed_opt, init_params
from fedconform.neighbors import assignment_accuracy, build_feature_bank, build_pixel_bank
from fedconform.partition import ClientDataset, generate_synthetic, load_csv, partition
from fedconform.pipeline import (
    ClientNode,
    adaptive_predict_batch,
    fcp_predict_batch,
    local_predict_batch,
    select_min_k,
)


def empirical_coverage(sets: Sequence[frozenset[int]], labels) -> float:
    """Fraction of samples whose true label is in their prediction set."""
    if len(sets) != len(labels):
        raise DimensionError(f"{len(sets)} sets vs {len(labels)} labels")
    if not sets:
        raise InvalidInputError("no prediction sets")
    return sum(1 for s, y in zip(sets, labels) if int(y) in s) / len(sets)


def average_cardinality(sets: Sequence[frozenset[int]]) -> float:
    """Mean prediction-set size."""
    if not sets:
        raise InvalidInputError("no prediction sets")
    return sum(len(s) for s in sets) / len(sets)


def coverage_by_group(
    sets: Sequence[frozenset[int]], labels, groups
) -> dict[int, float]:
    """Coverage restricted to each distinct group value (client or class)."""
    groups = np.asarray(groups)
    out: dict[int, float] = {}
    for g in np.unique(groups):
        idx = np.flatnonzero(groups == g)
        out[int(g)] = empirical_coverage(
            [sets[i] for i in idx], [labels[i] for i in idx]
        )
    return out


@dataclass(frozen=True)
class ReportRow:
    """One evaluated (method, alpha, k) cell."""

    method: str
    alpha: float
    k: int | None
    coverage: float
    per_client_coverage: dict[int, float]
    per_class_coverage: dict[int, float]
    avg_cardinality: float
    assignment_top_k: dict[int, float]


@dataclass(frozen=True)
class ExperimentReport:
    rows: tuple[ReportRow, ...]
    metadata: dict

    def to_dict(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows], "metadata": dict(self.metadata)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, payload: dict) -> "ExperimentReport":
        rows = tuple(
            ReportRow(
                method=r["method"],
                alpha=float(r["alpha"]),
                k=None if r["k"] is None else int(r["k"]),
                coverage=float(r["coverage"]),
                per_client_coverage={int(c): float(v) for c, v in r["per_client_coverage"].items()},
                per_class_coverage={int(c): float(v) for c, v in r["per_class_coverage"].items()},
                avg_cardinality=float(r["avg_cardinality"]),
                assignment_top_k={int(c): float(v) for c, v in r["assignment_top_k"].items()},
            )
            for r in payload["rows"]
        )
        return cls(rows=rows, metadata=dict(payload["metadata"]))

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        return cls.from_dict(json.loads(text))


@dataclass
class PreparedExperiment:
    """Frozen state shared by every evaluation cell of one experiment."""

    config: ExperimentConfig
    clients: list[ClientDataset]
    model: MLPClassifier
    cal_states: list[CalibrationState]
    nodes: list[ClientNode]
    banks: list
    test_examples: list[LabeledExample]
    x_test: np.ndarray
    y_test: np.ndarray
    origins_test: np.ndarray
    probs_test: np.ndarray


def _load_dataset(config: ExperimentConfig) -> list[LabeledExample]:
    ds = config.dataset
    if ds.source == "synthetic":
        return generate_synthetic(ds.classes, ds.dim, ds.per_class, ds.separation, ds.seed)
    return load_csv(ds.path)


def prepare_experiment(config: ExperimentConfig, threads: int = 1) -> PreparedExperiment:
    """Data, partition, trained model, calibration, banks: one deterministic pass."""
    data = _load_dataset(config)
    dim = data[0].features.size
    classes = int(max(ex.label for ex in data)) + 1
    clients = partition(data, config.partition)
    params = fed_opt(
        init_params(dim, config.train.hidden_dim, classes, config.train.seed),
        clients,
        config.train,
        threads=threads,
    )
    model = MLPClassifier(params)
    alphas = list(config.alphas)
    cal_states = [calibrate_client(model, c.cal, alphas) for c in clients]
    if config.assignment.space == "feature":
        banks = [build_feature_bank(model, c.cal) for c in clients]
    else:
        banks = [build_pixel_bank(c.cal) for c in clients]
    nodes = [
        ClientNode(c.client_id, state, bank)
        for c, state, bank in zip(clients, cal_states, banks)
    ]
    test_examples = [ex for c in clients for ex in c.test]
    x_test, y_test, origins_test = stack_examples(test_examples)
    probs_test = model.predict_proba_batch(x_test)
    return PreparedExperiment(
        config=config,
        clients=clients,
        model=model,
        cal_states=cal_states,
        nodes=nodes,
        banks=banks,
        test_examples=test_examples,
        x_test=x_test,
        y_test=y_test,
        origins_test=origins_test,
        probs_test=probs_test,
    )


def method_sets(
    prepared: PreparedExperiment,
    method: str,
    alpha: float,
    k: int | None = None,
    index=None,
) -> list[frozenset[int]]:
    """Prediction sets for one cell, optionally on a test subset."""
    idx = np.arange(len(prepared.test_examples)) if index is None else np.asarray(index)
    probs = prepared.probs_test[idx]
    if method == "adaptive":
        if k is None:
            raise InvalidInputError("adaptive method requires k")
        batch = adaptive_predict_batch(
            prepared.x_test[idx],
            prepared.model,
            prepared.nodes,
            alpha,
            k,
            space=prepared.config.assignment.space,
        )
        return batch.sets
    if method == "fcp":
        return fcp_predict_batch(probs, prepared.cal_states, alpha)
    if method == "local":
        return local_predict_batch(
            probs, prepared.origins_test[idx], prepared.cal_states, alpha
        )
    raise InvalidInputError(f"unknown method {method!r}")


def _assignment_map(prepared: PreparedExperiment) -> dict[int, float]:
    embed_fn = (
        prepared.model.embed_batch
        if prepared.config.assignment.space == "feature"
        else None
    )
    return {
        int(k): assignment_accuracy(prepared.test_examples, prepared.banks, int(k), embed_fn)
        for k in prepared.config.assignment.k_values
    }


def run_experiment(config: ExperimentConfig, threads: int = 1) -> ExperimentReport:
    """Evaluate every configured (method, alpha, k) cell on the pooled test set."""
    prepared = prepare_experiment(config, threads=threads)
    assignment = _assignment_map(prepared)
    labels = prepared.y_test
    rows = []
    for method in config.methods:
        k_grid: list[int | None] = (
            [int(k) for k in config.assignment.k_values] if method == "adaptive" else [None]
        )
        for alpha in config.alphas:
            for k in k_grid:
                sets = method_sets(prepared, method, alpha, k)
                rows.append(
                    ReportRow(
                        method=method,
                        alpha=alpha,
                        k=k,
                        coverage=empirical_coverage(sets, labels),
                        per_client_coverage=coverage_by_group(
                            sets, labels, prepared.origins_test
                        ),
                        per_class_coverage=coverage_by_group(sets, labels, labels),
                        avg_cardinality=average_cardinality(sets),
                        assignment_top_k=assignment,
                    )
                )
    metadata = {
        "data_seed": config.dataset.seed,
        "partition_seed": config.partition.seed,
        "train_seed": config.train.seed,
        "config_digest": config_digest(config),
        "n_test": len(prepared.test_examples),
        "n_clients": len(prepared.clients),
    }
    return ExperimentReport(rows=tuple(rows), metadata=metadata)


def tuning_split(prepared: PreparedExperiment) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint (tuning, reporting) index arrays over the pooled test set.

    The first ceil(half) of each client's test block goes to tuning, so k
    selection never sees the examples it is later judged on.
    """
    tune: list[int] = []
    report: list[int] = []
    offset = 0
    for c in prepared.clients:
        n = len(c.test)
        half = (n + 1) // 2
        tune.extend(range(offset, offset + half))
        report.extend(range(offset + half, offset + n))
        offset += n
    return np.array(tune, dtype=np.int64), np.array(report, dtype=np.int64)


@dataclass(frozen=True)
class KSweepRow:
    k: int
    coverage: float
    cardinality: float


@dataclass(frozen=True)
class KSweepResult:
    alpha: float
    target: float
    rows: tuple[KSweepRow, ...]
    selected_k: int
    met: bool
    prepared: PreparedExperiment = field(repr=False, compare=False)
    tuning_index: np.ndarray = field(repr=False, compare=False)
    reporting_index: np.ndarray = field(repr=False, compare=False)


def sweep_k(
    config: ExperimentConfig, alpha: float, margin: float = 0.0, threads: int = 1
) -> KSweepResult:
    """Evaluate the adaptive method for every k on a held-out tuning split.

    Selects the smallest k whose tuning coverage reaches (1 - alpha) +
    margin; falls back to k = K (met=False) when none qualifies. The
    reporting split stays untouched for downstream use.
    """
    if alpha not in config.alphas:
        config = dataclasses.replace(config, alphas=config.alphas + (alpha,))
    prepared = prepare_experiment(config, threads=threads)
    tune_idx, report_idx = tuning_split(prepared)
    if tune_idx.size == 0:
        raise InvalidInputError("no tuning examples available")
    labels = prepared.y_test[tune_idx]
    total_k = len(prepared.clients)
    rows = []
    coverage_by_k: dict[int, float] = {}
    for k in range(1, total_k + 1):
        sets = method_sets(prepared, "adaptive", alpha, k, index=tune_idx)
        cov = empirical_coverage(sets, labels)
        rows.append(KSweepRow(k=k, coverage=cov, cardinality=average_cardinality(sets)))
        coverage_by_k[k] = cov
    target = 1.0 - alpha
    selected, met = select_min_k(coverage_by_k, target, margin)
    return KSweepResult(
        alpha=alpha,
        target=target,
        rows=tuple(rows),
        selected_k=selected,
        met=met,
        prepared=prepared,
        tuning_index=tune_idx,
        reporting_index=report_idx,
    )
