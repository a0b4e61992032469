"""Split-conformal calibration and prediction-set construction.

Each client computes nonconformity scores 1 - p_y(x) on its own held-out
calibration examples with the frozen global model, sorts them ascending,
and takes the rank ceil((1 - alpha)(m + 1)) order statistic as its
threshold. When that rank exceeds m the threshold is the FULL_SET
sentinel: the calibration set is too small to certify the requested level
and every label is admitted. A pooled variant concatenates all clients'
scores and applies the same rank rule to the combined set.

Prediction sets collect every label whose score falls at or below the
threshold, which gives finite-sample marginal coverage >= 1 - alpha
whenever calibration and test points are exchangeable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from fedconform.core import (
    FULL_SET,
    InvalidInputError,
    LabeledExample,
    quantile_index,
    stack_examples,
)
from fedconform.fedtrain import Predictor


@dataclass(frozen=True)
class CalibrationState:
    """One client's sorted calibration scores and per-alpha thresholds.

    Private to the owning client: scores never cross the client boundary
    in the neighbor-based pipeline (only scalar thresholds do); the pooled
    baseline deliberately reads them, modelling the score-sharing protocol
    it represents.
    """

    client_id: int
    sorted_scores: np.ndarray
    thresholds: dict[float, float]

    def __post_init__(self):
        scores = np.asarray(self.sorted_scores, dtype=np.float64)
        if scores.ndim != 1 or scores.size == 0:
            raise InvalidInputError("sorted_scores must be a non-empty vector")
        if np.any(np.diff(scores) < 0.0):
            raise InvalidInputError("sorted_scores must be ascending")
        scores.setflags(write=False)
        object.__setattr__(self, "sorted_scores", scores)

    @property
    def size(self) -> int:
        return int(self.sorted_scores.size)


def nonconformity(p, y: int) -> float:
    """Score of label y under probability vector p: 1 - p[y]."""
    probs = np.asarray(p, dtype=np.float64)
    if not 0 <= y < probs.size:
        raise InvalidInputError(f"label {y} out of range for {probs.size} classes")
    return float(1.0 - probs[y])


def nonconformity_batch(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Row-wise 1 - probs[i, labels[i]]."""
    return 1.0 - probs[np.arange(probs.shape[0]), labels]


def threshold_for(sorted_scores: np.ndarray, alpha: float) -> float:
    """Rank-based threshold over ascending scores, or FULL_SET."""
    rank = quantile_index(sorted_scores.size, alpha)
    return FULL_SET if rank is None else float(sorted_scores[rank - 1])


def calibrate_client(
    model: Predictor,
    cal: Sequence[LabeledExample],
    alphas: Sequence[float],
) -> CalibrationState:
    """Score a client's calibration split and fix its thresholds.

    Scores come from the frozen model; sorting is stable so duplicate
    scores keep input order (the selected value is unaffected either way).
    """
    if not cal:
        raise InvalidInputError("calibration split is empty")
    x, y, origins = stack_examples(cal)
    probs = model.predict_proba_batch(x)
    scores = np.sort(nonconformity_batch(probs, y), kind="stable")
    thresholds = {float(a): threshold_for(scores, float(a)) for a in alphas}
    return CalibrationState(
        client_id=int(origins[0]), sorted_scores=scores, thresholds=thresholds
    )


def pooled_threshold(states: Sequence[CalibrationState], alpha: float) -> float:
    """Threshold from the concatenation of every client's scores.

    Re-sorts the pooled set and applies the rank rule with m equal to the
    total score count.
    """
    if not states:
        raise InvalidInputError("no calibration states")
    pooled = np.sort(np.concatenate([s.sorted_scores for s in states]), kind="stable")
    if pooled.size == 0:
        raise InvalidInputError("all calibration states are empty")
    return threshold_for(pooled, alpha)


def prediction_set(p, tau: float) -> frozenset[int]:
    """Labels whose nonconformity does not exceed the threshold."""
    scores = 1.0 - np.asarray(p, dtype=np.float64)
    return frozenset(int(i) for i in np.flatnonzero(scores <= tau))


def prediction_sets_batch(probs: np.ndarray, taus) -> list[frozenset[int]]:
    """Per-row prediction sets; ``taus`` is a scalar or per-row vector."""
    taus = np.broadcast_to(np.asarray(taus, dtype=np.float64), (probs.shape[0],))
    mask = (1.0 - probs) <= taus[:, None]
    return [frozenset(int(i) for i in np.flatnonzero(row)) for row in mask]
