"""Per-client vector banks and nearest-client selection.

Each client stores the frozen-model embeddings of its calibration
examples (a feature bank) or their raw flattened features (a pixel bank,
kept as an ablation). For a query vector, a client reports only the
distance to its nearest bank entry; ranking those scalars picks the k
most relevant clients. Scans are exact linear passes: banks are small and
exactness keeps the oracles simple.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from fedconform import _kernels
from fedconform.core import (
    DimensionError,
    InvalidInputError,
    LabeledExample,
    stack_examples,
)
from fedconform.fedtrain import Predictor


@dataclass(frozen=True)
class FeatureBank:
    """Embeddings of one client's calibration examples, input order kept."""

    client_id: int
    vectors: np.ndarray

    def __post_init__(self):
        vectors = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] == 0:
            raise InvalidInputError("bank must be a non-empty (m, h) array")
        if not np.all(np.isfinite(vectors)):
            raise InvalidInputError("bank vectors must be finite")
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)


@dataclass(frozen=True)
class PixelBank(FeatureBank):
    """Raw flattened features of one client's calibration examples."""


@dataclass(frozen=True)
class DistanceReply:
    """Scalar nearest-bank distance a client reports for one query.

    One of exactly three message types allowed across the client boundary
    (see fedconform.pipeline.CROSS_BOUNDARY_MESSAGE_TYPES).
    """

    client_id: int
    distance: float


def vectorize_pixels(features) -> np.ndarray:
    """Row-major flatten; identity on already-flat feature vectors."""
    return np.asarray(features, dtype=np.float64).ravel(order="C")


def build_feature_bank(model: Predictor, cal: Sequence[LabeledExample]) -> FeatureBank:
    """Embed a client's calibration examples with the frozen model."""
    if not cal:
        raise InvalidInputError("calibration split is empty")
    x, _, origins = stack_examples(cal)
    return FeatureBank(client_id=int(origins[0]), vectors=model.embed_batch(x))


def build_pixel_bank(cal: Sequence[LabeledExample]) -> PixelBank:
    """Stack a client's raw calibration features, flattened row-major."""
    if not cal:
        raise InvalidInputError("calibration split is empty")
    vectors = np.stack([vectorize_pixels(ex.features) for ex in cal])
    return PixelBank(client_id=cal[0].origin_client, vectors=vectors)


def min_distance(bank: FeatureBank, query) -> float:
    """Distance from the query to the nearest bank vector (exact scan)."""
    q = np.ascontiguousarray(query, dtype=np.float64)
    if q.ndim != 1 or q.size != bank.vectors.shape[1]:
        raise DimensionError(
            f"query length {q.shape} does not match bank width {bank.vectors.shape[1]}"
        )
    return float(_kernels.min_distances(bank.vectors, q[None, :])[0])


def min_distances_batch(bank: FeatureBank, queries) -> np.ndarray:
    """Nearest-bank distance for each query row."""
    q = np.ascontiguousarray(queries, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != bank.vectors.shape[1]:
        raise DimensionError(
            f"queries shape {q.shape} does not match bank width {bank.vectors.shape[1]}"
        )
    return _kernels.min_distances(bank.vectors, q)


def top_k_clients(replies: Sequence[DistanceReply], k: int) -> list[int]:
    """Client ids of the k smallest distances, nearest first.

    Ties break by ascending client id; the result is invariant to the
    order of the replies list.
    """
    if not 1 <= k <= len(replies):
        raise InvalidInputError(f"k={k} outside [1, {len(replies)}]")
    ranked = sorted(replies, key=lambda r: (r.distance, r.client_id))
    return [r.client_id for r in ranked[:k]]


def _rank_matrix(banks: Sequence[FeatureBank], queries: np.ndarray) -> np.ndarray:
    """(K, n) matrix of bank indexes sorted per query by (distance, id)."""
    ids = np.array([b.client_id for b in banks])
    dist = np.stack([min_distances_batch(b, queries) for b in banks])
    order = np.lexsort((np.broadcast_to(ids[:, None], dist.shape), dist), axis=0)
    return order


def assignment_accuracy(
    test: Sequence[LabeledExample],
    banks: Sequence[FeatureBank],
    k: int,
    embed_fn=None,
) -> float:
    """Fraction of test examples whose origin client is in their top k.

    ``embed_fn`` maps raw features into the banks' vector space (e.g. the
    model embedding for feature banks); identity when None, which suits
    pixel banks. Requires origin_client ground truth on every example.
    """
    if not 1 <= k <= len(banks):
        raise InvalidInputError(f"k={k} outside [1, {len(banks)}]")
    if not test:
        raise InvalidInputError("test set is empty")
    x, _, origins = stack_examples(test)
    if np.any(origins < 0):
        raise InvalidInputError("every test example needs origin_client ground truth")
    queries = np.ascontiguousarray(embed_fn(x)) if embed_fn is not None else x
    order = _rank_matrix(banks, queries)
    ids = np.array([b.client_id for b in banks])
    top = ids[order[:k, :]]
    hits = (top == origins[None, :]).any(axis=0)
    return float(hits.mean())
