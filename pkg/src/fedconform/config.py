"""Experiment configuration: JSON schema, strict parsing, canonical digest.

The config file is a single JSON document with nested sections (dataset,
partition, train, conformal, assignment, methods, output). Unknown keys
are hard errors: a silently ignored typo can corrupt a whole study.
Errors carry the offending key path; JSON syntax errors carry the line.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

from fedconform.core import InvalidInputError
from fedconform.fedtrain import TrainConfig
from fedconform.partition import PartitionSpec
from fedconform.pipeline import ASSIGNMENT_SPACES, METHOD_NAMES

OUTPUT_FORMATS = ("csv", "json")


class ConfigError(ValueError):
    """The configuration file is malformed or self-inconsistent."""


@dataclass(frozen=True)
class DatasetConfig:
    source: str = "synthetic"
    path: str | None = None
    classes: int = 5
    dim: int = 8
    per_class: int = 400
    separation: float = 4.0
    seed: int = 0


@dataclass(frozen=True)
class AssignmentConfig:
    k_values: tuple[int, ...] = ()
    space: str = "feature"


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "results"
    formats: tuple[str, ...] = ("csv", "json")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig
    partition: PartitionSpec
    train: TrainConfig
    alphas: tuple[float, ...]
    assignment: AssignmentConfig
    methods: tuple[str, ...]
    output: OutputConfig


def _require_mapping(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: expected an object")
    return value


def _check_keys(section: dict, allowed: tuple[str, ...], path: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"{path}: unknown key {unknown[0]!r}")


def _scalar(section: dict, key: str, kind, path: str, default):
    if key not in section:
        if default is _REQUIRED:
            raise ConfigError(f"{path}.{key}: required")
        return default
    value = section[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{path}.{key}: expected an integer, got {value!r}")
    if not isinstance(value, kind):
        raise ConfigError(f"{path}.{key}: expected {kind.__name__}, got {value!r}")
    return value


_REQUIRED = object()


def _parse_dataset(section: dict) -> DatasetConfig:
    path = "dataset"
    _check_keys(section, ("source", "path", "classes", "dim", "per_class", "separation", "seed"), path)
    source = _scalar(section, "source", str, path, "synthetic")
    if source not in ("synthetic", "csv"):
        raise ConfigError(f"{path}.source: must be 'synthetic' or 'csv', got {source!r}")
    ds = DatasetConfig(
        source=source,
        path=_scalar(section, "path", str, path, None),
        classes=_scalar(section, "classes", int, path, 5),
        dim=_scalar(section, "dim", int, path, 8),
        per_class=_scalar(section, "per_class", int, path, 400),
        separation=_scalar(section, "separation", float, path, 4.0),
        seed=_scalar(section, "seed", int, path, 0),
    )
    if source == "csv" and not ds.path:
        raise ConfigError(f"{path}.path: required when source is 'csv'")
    if source == "synthetic" and (ds.classes < 2 or ds.dim < 2 or ds.per_class < 1):
        raise ConfigError(f"{path}: synthetic source needs classes >= 2, dim >= 2, per_class >= 1")
    return ds


def _parse_partition(section: dict) -> PartitionSpec:
    path = "partition"
    allowed = ("kind", "clients", "seed", "cal_fraction", "test_fraction",
               "dirichlet_beta", "sample_weights")
    _check_keys(section, allowed, path)
    weights = section.get("sample_weights")
    if weights is not None:
        if not isinstance(weights, list):
            raise ConfigError(f"{path}.sample_weights: expected a list")
        weights = tuple(float(w) for w in weights)
    try:
        return PartitionSpec(
            kind=_scalar(section, "kind", str, path, "iid"),
            clients=_scalar(section, "clients", int, path, _REQUIRED),
            seed=_scalar(section, "seed", int, path, 0),
            cal_fraction=_scalar(section, "cal_fraction", float, path, 0.25),
            test_fraction=_scalar(section, "test_fraction", float, path, 0.25),
            dirichlet_beta=_scalar(section, "dirichlet_beta", float, path, 1.0),
            sample_weights=weights,
        )
    except InvalidInputError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _parse_train(section: dict) -> TrainConfig:
    path = "train"
    allowed = ("rounds", "local_epochs", "batch_size", "learning_rate", "seed", "hidden_dim")
    _check_keys(section, allowed, path)
    try:
        return TrainConfig(
            rounds=_scalar(section, "rounds", int, path, 30),
            local_epochs=_scalar(section, "local_epochs", int, path, 1),
            batch_size=_scalar(section, "batch_size", int, path, 32),
            learning_rate=_scalar(section, "learning_rate", float, path, 0.05),
            seed=_scalar(section, "seed", int, path, 0),
            hidden_dim=_scalar(section, "hidden_dim", int, path, 64),
        )
    except InvalidInputError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def parse_config(payload: dict) -> ExperimentConfig:
    """Validate a parsed JSON document into an ExperimentConfig."""
    root = _require_mapping(payload, "config")
    _check_keys(root, ("dataset", "partition", "train", "conformal", "assignment",
                       "methods", "output"), "config")
    dataset = _parse_dataset(_require_mapping(root.get("dataset", {}), "dataset"))
    if "partition" not in root:
        raise ConfigError("partition: section required")
    spec = _parse_partition(_require_mapping(root["partition"], "partition"))
    train = _parse_train(_require_mapping(root.get("train", {}), "train"))

    conformal_sec = _require_mapping(root.get("conformal", {}), "conformal")
    _check_keys(conformal_sec, ("alphas",), "conformal")
    alphas_raw = conformal_sec.get("alphas", [0.1])
    if not isinstance(alphas_raw, list) or not alphas_raw:
        raise ConfigError("conformal.alphas: expected a non-empty list")
    alphas = tuple(float(a) for a in alphas_raw)
    for a in alphas:
        if not 0.0 < a < 1.0:
            raise ConfigError(f"conformal.alphas: {a} outside (0, 1)")

    assignment_sec = _require_mapping(root.get("assignment", {}), "assignment")
    _check_keys(assignment_sec, ("k_values", "space"), "assignment")
    k_raw = assignment_sec.get("k_values", [])
    if not isinstance(k_raw, list):
        raise ConfigError("assignment.k_values: expected a list")
    k_values = []
    for k in k_raw:
        if isinstance(k, bool) or not isinstance(k, int):
            raise ConfigError(f"assignment.k_values: expected integers, got {k!r}")
        if not 1 <= k <= spec.clients:
            raise ConfigError(
                f"assignment.k_values: k={k} outside [1, clients={spec.clients}]"
            )
        k_values.append(k)
    space = assignment_sec.get("space", "feature")
    if space not in ASSIGNMENT_SPACES:
        raise ConfigError(f"assignment.space: must be one of {ASSIGNMENT_SPACES}")

    methods_raw = root.get("methods", list(METHOD_NAMES))
    if not isinstance(methods_raw, list) or not methods_raw:
        raise ConfigError("methods: expected a non-empty list")
    for m in methods_raw:
        if m not in METHOD_NAMES:
            raise ConfigError(f"methods: unknown method {m!r} (choose from {METHOD_NAMES})")
    if "adaptive" in methods_raw and not k_values:
        raise ConfigError("assignment.k_values: required when methods include 'adaptive'")

    output_sec = _require_mapping(root.get("output", {}), "output")
    _check_keys(output_sec, ("directory", "formats"), "output")
    formats_raw = output_sec.get("formats", list(OUTPUT_FORMATS))
    if not isinstance(formats_raw, list) or not formats_raw:
        raise ConfigError("output.formats: expected a non-empty list")
    for f in formats_raw:
        if f not in OUTPUT_FORMATS:
            raise ConfigError(f"output.formats: unknown format {f!r}")
    output = OutputConfig(
        directory=_scalar(output_sec, "directory", str, "output", "results"),
        formats=tuple(formats_raw),
    )

    return ExperimentConfig(
        dataset=dataset,
        partition=spec,
        train=train,
        alphas=alphas,
        assignment=AssignmentConfig(k_values=tuple(k_values), space=space),
        methods=tuple(methods_raw),
        output=output,
    )


def load_config(path) -> ExperimentConfig:
    """Parse and validate a config file; errors name the line or key path."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from None
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return parse_config(payload)


def canonical_dict(config: ExperimentConfig) -> dict:
    """Plain-dict form with deterministic content, used for digests and echoing."""
    return dataclasses.asdict(config)


def config_digest(config: ExperimentConfig) -> str:
    """Short stable digest of the scientific configuration.

    The output section is excluded: where results are written must not
    change what they are.
    """
    payload = canonical_dict(config)
    payload.pop("output", None)
    canonical = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def override_seeds(config: ExperimentConfig, seed: int) -> ExperimentConfig:
    """Replace all three named seeds (data, partition, training)."""
    return dataclasses.replace(
        config,
        dataset=dataclasses.replace(config.dataset, seed=seed),
        partition=dataclasses.replace(config.partition, seed=seed),
        train=dataclasses.replace(config.train, seed=seed),
    )
