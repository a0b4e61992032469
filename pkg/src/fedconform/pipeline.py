"""End-to-end inference: adaptive neighbor-based sets plus two baselines.

The adaptive method embeds the test sample with the frozen model, asks
every client for its scalar distance to the query, keeps the k nearest
clients, and takes the max of their conformal thresholds. The max is
deliberately conservative: the aggregated threshold can never undercut
any selected client's own threshold, so imperfect client matching cannot
push coverage below what those clients individually certify. Growing k
widens the neighborhood, trading larger prediction sets for robustness;
k = K reproduces a conservative global threshold.

Baselines: ``fcp`` applies one threshold from the pooled calibration
scores of all clients, and ``local`` is the oracle that applies the test
sample's true origin-client threshold.

Privacy boundary: exactly three message types cross between clients and
the rest of the system (CROSS_BOUNDARY_MESSAGE_TYPES). A ClientNode keeps
its calibration state and bank in private attributes and exposes only
reply methods; raw examples, score vectors, and bank contents of one
client are never readable from another client's scope or from the server
side of the adaptive path. The pooled baseline reads calibration states
directly at the harness level, modelling the score-sharing protocol it
stands for.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from fedconform.conformal import (
    CalibrationState,
    calibrate_client,
    pooled_threshold,
    prediction_set,
    prediction_sets_batch,
)
from fedconform.core import InvalidInputError
from fedconform.fedtrain import ClientUpdate, Predictor
from fedconform.neighbors import (
    DistanceReply,
    build_feature_bank,
    build_pixel_bank,
    min_distance,
    min_distances_batch,
    top_k_clients,
)
from fedconform.partition import ClientDataset

METHOD_NAMES = ("adaptive", "fcp", "local")

ASSIGNMENT_SPACES = ("feature", "pixel")


@dataclass(frozen=True)
class ThresholdReply:
    """Scalar conformal threshold a client reports for one alpha.

    One of exactly three message types allowed across the client boundary.
    """

    client_id: int
    threshold: float


#: The complete set of types that may cross the client boundary.
CROSS_BOUNDARY_MESSAGE_TYPES = (ClientUpdate, DistanceReply, ThresholdReply)


class ClientNode:
    """One client's private scope at inference time.

    Calibration state and bank are private attributes; the public surface
    consists of ``client_id`` and methods returning only scalar-message
    types.
    """

    def __init__(self, client_id: int, cal_state: CalibrationState, bank):
        if cal_state.client_id != client_id or bank.client_id != client_id:
            raise InvalidInputError("client_id mismatch between state and bank")
        self.client_id = client_id
        self._cal_state = cal_state
        self._bank = bank

    @classmethod
    def from_dataset(
        cls,
        dataset: ClientDataset,
        model: Predictor,
        alphas: Sequence[float],
        space: str = "feature",
    ) -> "ClientNode":
        """Calibrate and build the bank locally, then seal them in a node."""
        if space not in ASSIGNMENT_SPACES:
            raise InvalidInputError(f"space must be one of {ASSIGNMENT_SPACES}")
        state = calibrate_client(model, dataset.cal, alphas)
        if space == "feature":
            bank = build_feature_bank(model, dataset.cal)
        else:
            bank = build_pixel_bank(dataset.cal)
        return cls(dataset.client_id, state, bank)

    def distance_reply(self, query) -> DistanceReply:
        """Distance from the query to this client's nearest bank vector."""
        return DistanceReply(self.client_id, min_distance(self._bank, query))

    def distance_replies(self, queries) -> list[DistanceReply]:
        """One DistanceReply per query row (batched scalar messages)."""
        dists = min_distances_batch(self._bank, queries)
        return [DistanceReply(self.client_id, float(d)) for d in dists]

    def threshold_reply(self, alpha: float) -> ThresholdReply:
        """This client's calibrated threshold for the requested alpha."""
        thresholds = self._cal_state.thresholds
        if alpha not in thresholds:
            raise InvalidInputError(f"no threshold calibrated for alpha={alpha}")
        return ThresholdReply(self.client_id, thresholds[alpha])


def max_neighbor_threshold(
    replies: Sequence[ThresholdReply], neighbor_ids: Sequence[int]
) -> float:
    """Max threshold over the selected neighbor clients.

    FULL_SET (infinity) held by any neighbor dominates every finite value.
    """
    if not neighbor_ids:
        raise InvalidInputError("neighbor set is empty")
    by_id = {r.client_id: r.threshold for r in replies}
    missing = [i for i in neighbor_ids if i not in by_id]
    if missing:
        raise InvalidInputError(f"no threshold reply from clients {missing}")
    return max(by_id[i] for i in neighbor_ids)


@dataclass(frozen=True)
class AdaptiveBatch:
    """Prediction sets plus the per-sample audit trail of the aggregation."""

    sets: list[frozenset[int]]
    thresholds: np.ndarray
    neighbor_ids: np.ndarray
    neighbor_thresholds: np.ndarray


def adaptive_predict_batch(
    features,
    model: Predictor,
    nodes: Sequence[ClientNode],
    alpha: float,
    k: int,
    space: str = "feature",
) -> AdaptiveBatch:
    """Neighbor-selected max-threshold prediction sets for a feature batch.

    For every sample, distances are gathered from all clients, the k
    nearest are selected (ties to the lower client id), threshold replies
    are gathered from exactly those k, and the max becomes the sample's
    threshold. The only client-derived values influencing the result are
    the ranking of the scalar distances and the k scalar thresholds.
    """
    if not 1 <= k <= len(nodes):
        raise InvalidInputError(f"k={k} outside [1, {len(nodes)}]")
    if space not in ASSIGNMENT_SPACES:
        raise InvalidInputError(f"space must be one of {ASSIGNMENT_SPACES}")
    x = np.ascontiguousarray(features, dtype=np.float64)
    probs = model.predict_proba_batch(x)
    queries = model.embed_batch(x) if space == "feature" else x
    replies_per_node = [node.distance_replies(queries) for node in nodes]
    node_by_id = {node.client_id: node for node in nodes}
    threshold_cache: dict[int, float] = {}

    n = x.shape[0]
    neighbor_ids = np.empty((n, k), dtype=np.int64)
    neighbor_taus = np.empty((n, k))
    taus = np.empty(n)
    for i in range(n):
        replies_i = [per_node[i] for per_node in replies_per_node]
        chosen = top_k_clients(replies_i, k)
        for slot, cid in enumerate(chosen):
            if cid not in threshold_cache:
                threshold_cache[cid] = node_by_id[cid].threshold_reply(alpha).threshold
            neighbor_taus[i, slot] = threshold_cache[cid]
        neighbor_ids[i] = chosen
        taus[i] = neighbor_taus[i].max()
    return AdaptiveBatch(
        sets=prediction_sets_batch(probs, taus),
        thresholds=taus,
        neighbor_ids=neighbor_ids,
        neighbor_thresholds=neighbor_taus,
    )


def adaptive_predict(
    x,
    model: Predictor,
    nodes: Sequence[ClientNode],
    alpha: float,
    k: int,
    space: str = "feature",
) -> frozenset[int]:
    """Single-sample form of adaptive_predict_batch."""
    batch = adaptive_predict_batch(
        np.asarray(x, dtype=np.float64)[None, :], model, nodes, alpha, k, space
    )
    return batch.sets[0]


def fcp_predict(
    x, model: Predictor, cal_states: Sequence[CalibrationState], alpha: float
) -> frozenset[int]:
    """Prediction set under the single pooled-score threshold."""
    probs = model.predict_proba_batch(np.asarray(x, dtype=np.float64)[None, :])[0]
    return prediction_set(probs, pooled_threshold(cal_states, alpha))


def fcp_predict_batch(
    probs: np.ndarray, cal_states: Sequence[CalibrationState], alpha: float
) -> list[frozenset[int]]:
    """Pooled-threshold sets for precomputed probability rows."""
    return prediction_sets_batch(probs, pooled_threshold(cal_states, alpha))


def _states_by_id(cal_states: Sequence[CalibrationState]) -> Mapping[int, CalibrationState]:
    return {s.client_id: s for s in cal_states}


def local_predict(
    x,
    origin_client: int,
    model: Predictor,
    cal_states: Sequence[CalibrationState],
    alpha: float,
) -> frozenset[int]:
    """Oracle baseline: apply the sample's own client's threshold."""
    states = _states_by_id(cal_states)
    if origin_client not in states:
        raise InvalidInputError(f"unknown origin client {origin_client}")
    probs = model.predict_proba_batch(np.asarray(x, dtype=np.float64)[None, :])[0]
    return prediction_set(probs, states[origin_client].thresholds[alpha])


def local_predict_batch(
    probs: np.ndarray,
    origins: np.ndarray,
    cal_states: Sequence[CalibrationState],
    alpha: float,
) -> list[frozenset[int]]:
    """Origin-client-threshold sets for precomputed probability rows."""
    states = _states_by_id(cal_states)
    taus = np.empty(probs.shape[0])
    for i, origin in enumerate(origins):
        origin = int(origin)
        if origin not in states:
            raise InvalidInputError(f"unknown origin client {origin}")
        taus[i] = states[origin].thresholds[alpha]
    return prediction_sets_batch(probs, taus)


def select_min_k(coverage_by_k: Mapping[int, float], target: float, margin: float = 0.0):
    """Smallest k whose coverage reaches target + margin.

    Returns (k, True) for the first qualifying k in ascending order, or
    (max k, False) when none qualifies.
    """
    if not coverage_by_k:
        raise InvalidInputError("empty coverage map")
    for k in sorted(coverage_by_k):
        if coverage_by_k[k] >= target + margin:
            return k, True
    return max(coverage_by_k), False


__all__ = [
    "ASSIGNMENT_SPACES",
    "AdaptiveBatch",
    "CROSS_BOUNDARY_MESSAGE_TYPES",
    "ClientNode",
    "METHOD_NAMES",
    "ThresholdReply",
    "adaptive_predict",
    "adaptive_predict_batch",
    "fcp_predict",
    "fcp_predict_batch",
    "local_predict",
    "local_predict_batch",
    "max_neighbor_threshold",
    "select_min_k",
]
