"""Synchronous federated optimization of a one-hidden-layer classifier.

The bundled predictor is a relu MLP: the hidden activations double as the
representation used for client-similarity matching, and the softmax output
supplies class probabilities. Everything downstream (calibration, feature
banks, prediction sets) consumes only the ``Predictor`` protocol, so any
model exposing probabilities and embeddings can stand in.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from fedconform import _kernels
from fedconform.core import (
    DimensionError,
    InvalidInputError,
    LabeledExample,
    stack_examples,
)
from fedconform.partition import ClientDataset


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


def layout_size(dim: int, hidden: int, classes: int) -> int:
    return hidden * dim + hidden + classes * hidden + classes


@dataclass(frozen=True)
class ModelParameters:
    """Flat parameter vector with the fixed layout [w1, b1, w2, b2].

    w1 is (hidden, dim), w2 is (classes, hidden); biases follow each weight
    block. The stored vector is read-only; training works on copies.
    """

    dim: int
    hidden: int
    classes: int
    flat: np.ndarray

    def __post_init__(self):
        expected = layout_size(self.dim, self.hidden, self.classes)
        flat = np.asarray(self.flat, dtype=np.float64)
        if flat.shape != (expected,):
            raise DimensionError(
                f"flat length must be {expected} for layout "
                f"(d={self.dim}, h={self.hidden}, C={self.classes}), got {flat.shape}"
            )
        if not np.all(np.isfinite(flat)):
            raise InvalidInputError("parameters must be finite")
        flat = flat.copy()
        flat.setflags(write=False)
        object.__setattr__(self, "flat", flat)

    def unpack(self):
        """Views (w1, b1, w2, b2) into the flat vector."""
        return _unpack(self.flat, self.dim, self.hidden, self.classes)


def _unpack(flat: np.ndarray, dim: int, hidden: int, classes: int):
    split1 = hidden * dim
    split2 = split1 + hidden
    split3 = split2 + classes * hidden
    w1 = flat[:split1].reshape(hidden, dim)
    b1 = flat[split1:split2]
    w2 = flat[split2:split3].reshape(classes, hidden)
    b2 = flat[split3:]
    return w1, b1, w2, b2


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for the synchronous training rounds."""

    rounds: int = 30
    local_epochs: int = 1
    batch_size: int = 32
    learning_rate: float = 0.05
    seed: int = 0
    hidden_dim: int = 64

    def __post_init__(self):
        if self.rounds < 0:
            raise InvalidInputError(f"rounds must be >= 0, got {self.rounds}")
        if self.local_epochs < 1:
            raise InvalidInputError(f"local_epochs must be >= 1, got {self.local_epochs}")
        if self.batch_size < 1:
            raise InvalidInputError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0.0:
            raise InvalidInputError("learning_rate must be nonnegative")
        if self.hidden_dim < 1:
            raise InvalidInputError(f"hidden_dim must be >= 1, got {self.hidden_dim}")


@dataclass(frozen=True)
class ClientUpdate:
    """A client's retrained parameters plus its training sample count.

    One of exactly three message types allowed across the client boundary
    (see fedconform.pipeline.CROSS_BOUNDARY_MESSAGE_TYPES).
    """

    params: ModelParameters
    sample_count: int

    def __post_init__(self):
        if self.sample_count < 1:
            raise InvalidInputError("sample_count must be >= 1")


def init_params(dim: int, hidden: int, classes: int, seed: int) -> ModelParameters:
    """Uniform Glorot initialization for both weight matrices, zero biases."""
    if min(dim, hidden, classes) < 1:
        raise InvalidInputError("dimensions must be positive")
    rng = np.random.default_rng(seed)
    lim1 = math.sqrt(6.0 / (dim + hidden))
    w1 = rng.uniform(-lim1, lim1, size=(hidden, dim))
    lim2 = math.sqrt(6.0 / (hidden + classes))
    w2 = rng.uniform(-lim2, lim2, size=(classes, hidden))
    flat = np.concatenate([w1.ravel(), np.zeros(hidden), w2.ravel(), np.zeros(classes)])
    return ModelParameters(dim, hidden, classes, flat)


def local_train(
    params: ModelParameters,
    train: Sequence[LabeledExample],
    cfg: TrainConfig,
    client_id: int = 0,
    round_index: int = 0,
) -> ModelParameters:
    """Mini-batch SGD on cross-entropy for ``cfg.local_epochs`` epochs.

    Batch order reshuffles every epoch from a generator seeded by
    (cfg.seed, client_id, global epoch index), so R rounds of E epochs
    visit exactly the same batch sequence as a single call with R*E
    epochs. The final short batch is trained on. Input params are never
    modified.
    """
    if not train:
        raise InvalidInputError("train split is empty")
    x_all, y_all, _ = stack_examples(train)
    if x_all.shape[1] != params.dim:
        raise DimensionError(
            f"feature length {x_all.shape[1]} does not match model dim {params.dim}"
        )
    n = x_all.shape[0]
    working = params.flat.copy()
    w1, b1, w2, b2 = _unpack(working, params.dim, params.hidden, params.classes)
    lr = cfg.learning_rate
    for epoch in range(cfg.local_epochs):
        epoch_index = round_index * cfg.local_epochs + epoch
        order = np.random.default_rng([cfg.seed, client_id, epoch_index]).permutation(n)
        for start in range(0, n, cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            xb = np.ascontiguousarray(x_all[rows])
            yb = np.ascontiguousarray(y_all[rows])
            hidden, probs = _kernels.mlp_forward(w1, b1, w2, b2, xb)
            with np.errstate(divide="ignore"):
                loss = -float(np.mean(np.log(probs[np.arange(rows.size), yb])))
            if not math.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at round {round_index}, epoch {epoch}, "
                    f"client {client_id}"
                )
            gw1, gb1, gw2, gb2 = _kernels.mlp_backward(
                w1, b1, w2, b2, xb, yb, hidden, probs
            )
            w1 -= lr * gw1
            b1 -= lr * gb1
            w2 -= lr * gw2
            b2 -= lr * gb2
    return ModelParameters(params.dim, params.hidden, params.classes, working)


def aggregate(updates: Sequence[ClientUpdate]) -> ModelParameters:
    """Sample-proportional average of client parameters.

    Evaluated as anchor + sum_k (n_k / n) * (w_k - anchor), which is the
    same weighted mean but aggregates identical updates to themselves
    exactly, bit for bit.
    """
    if not updates:
        raise InvalidInputError("no updates to aggregate")
    first = updates[0].params
    layout = (first.dim, first.hidden, first.classes)
    for u in updates[1:]:
        if (u.params.dim, u.params.hidden, u.params.classes) != layout:
            raise DimensionError("updates have mismatched parameter layouts")
    total = sum(u.sample_count for u in updates)
    acc = first.flat.copy()
    for u in updates[1:]:
        acc += (u.sample_count / total) * (u.params.flat - first.flat)
    return ModelParameters(first.dim, first.hidden, first.classes, acc)


def _resolve_threads(threads: int, n_tasks: int) -> int:
    import os

    if threads == 0:
        threads = os.cpu_count() or 1
    return max(1, min(threads, n_tasks))


def fed_opt(
    init: ModelParameters,
    clients: Sequence[ClientDataset],
    cfg: TrainConfig,
    threads: int = 1,
) -> ModelParameters:
    """Run synchronous rounds of broadcast, local SGD, and aggregation.

    Only ClientUpdate values cross the client boundary. Client updates
    within a round are independent, so they may be computed concurrently
    (threads=0 uses all cores); results are identical to sequential
    execution because each client's batch seeds ignore scheduling order.
    """
    if not clients:
        raise InvalidInputError("no clients")
    for c in clients:
        if not c.train:
            raise InvalidInputError(f"client {c.client_id} has an empty train split")
    workers = _resolve_threads(threads, len(clients))
    global_params = init
    for round_index in range(cfg.rounds):
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                trained = list(
                    pool.map(
                        lambda c: local_train(
                            global_params, c.train, cfg,
                            client_id=c.client_id, round_index=round_index,
                        ),
                        clients,
                    )
                )
        else:
            trained = [
                local_train(
                    global_params, c.train, cfg,
                    client_id=c.client_id, round_index=round_index,
                )
                for c in clients
            ]
        updates = [
            ClientUpdate(params, len(c.train)) for params, c in zip(trained, clients)
        ]
        global_params = aggregate(updates)
    return global_params


def predict_proba_batch(params: ModelParameters, features) -> np.ndarray:
    """Class probabilities for a batch of feature rows, shape (n, C)."""
    x = np.ascontiguousarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.dim:
        raise DimensionError(
            f"expected (n, {params.dim}) features, got shape {x.shape}"
        )
    w1, b1, w2, b2 = params.unpack()
    _, probs = _kernels.mlp_forward(w1, b1, w2, b2, x)
    return probs


def embed_batch(params: ModelParameters, features) -> np.ndarray:
    """Hidden-layer representations for a batch of feature rows, (n, h)."""
    x = np.ascontiguousarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.dim:
        raise DimensionError(
            f"expected (n, {params.dim}) features, got shape {x.shape}"
        )
    w1, b1, w2, b2 = params.unpack()
    hidden, _ = _kernels.mlp_forward(w1, b1, w2, b2, x)
    return hidden


def predict_proba(params: ModelParameters, x) -> np.ndarray:
    """Class probabilities for a single feature vector, shape (C,)."""
    return predict_proba_batch(params, np.asarray(x, dtype=np.float64)[None, :])[0]


def embed(params: ModelParameters, x) -> np.ndarray:
    """relu(w1 x + b1) representation of one feature vector, shape (h,)."""
    return embed_batch(params, np.asarray(x, dtype=np.float64)[None, :])[0]


class Predictor(Protocol):
    """What calibration and client matching require of any model."""

    def predict_proba_batch(self, features) -> np.ndarray: ...

    def embed_batch(self, features) -> np.ndarray: ...


class MLPClassifier:
    """Frozen-parameter predictor wrapping the bundled MLP."""

    def __init__(self, params: ModelParameters):
        self.params = params

    def predict_proba_batch(self, features) -> np.ndarray:
        return predict_proba_batch(self.params, features)

    def embed_batch(self, features) -> np.ndarray:
        return embed_batch(self.params, features)

    def predict_proba(self, x) -> np.ndarray:
        return predict_proba(self.params, x)

    def embed(self, x) -> np.ndarray:
        return embed(self.params, x)
