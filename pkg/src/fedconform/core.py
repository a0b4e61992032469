"""Shared domain types and numerically careful primitives.

Conventions used throughout the package:

- labels are 0-based ints; a C-class problem has label space {0, ..., C-1}
- probability vectors and embeddings are plain float64 numpy arrays
- conformal thresholds are floats in [0, 1], with ``FULL_SET`` (infinity)
  as the sentinel that admits every label; it orders strictly above every
  finite threshold, so max-aggregation preserves it
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

#: Sentinel threshold meaning "admit the full label space".
FULL_SET: float = math.inf

#: origin_client value for examples not yet assigned to a client.
UNASSIGNED: int = -1


class InvalidInputError(ValueError):
    """An argument violates an operation's preconditions."""


class DimensionError(ValueError):
    """Array shapes or lengths are incompatible."""


@dataclass(frozen=True)
class LabeledExample:
    """A feature vector with its class label and owning client.

    ``origin_client`` is evaluation metadata: it records which client's
    split the example belongs to (UNASSIGNED before partitioning) and is
    never read by the prediction algorithms themselves.
    """

    features: np.ndarray
    label: int
    origin_client: int = UNASSIGNED

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 1:
            raise DimensionError(f"features must be 1-D, got shape {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise InvalidInputError("features must be finite")
        if self.label < 0:
            raise InvalidInputError(f"label must be >= 0, got {self.label}")
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "label", int(self.label))
        object.__setattr__(self, "origin_client", int(self.origin_client))


def stack_examples(examples: Sequence[LabeledExample]):
    """Stack examples into (features, labels, origins) arrays.

    features is (n, d) float64 C-contiguous, labels and origins are (n,)
    int64. Raises if the sequence is empty or feature lengths disagree.
    """
    if not examples:
        raise InvalidInputError("expected at least one example")
    try:
        feats = np.ascontiguousarray([ex.features for ex in examples], dtype=np.float64)
    except ValueError as exc:
        raise DimensionError(f"inconsistent feature lengths: {exc}") from None
    n = len(examples)
    labels = np.fromiter((ex.label for ex in examples), dtype=np.int64, count=n)
    origins = np.fromiter((ex.origin_client for ex in examples), dtype=np.int64, count=n)
    return feats, labels, origins


def softmax(logits) -> np.ndarray:
    """Numerically stable softmax: exp(z - max z) / sum exp(z - max z).

    The max shift keeps the largest exponent at 0, so inputs of any finite
    magnitude cannot overflow.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise InvalidInputError("logits must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("logits must be finite")
    e = np.exp(z - z.max())
    return e / e.sum()


def quantile_index(m: int, alpha: float) -> int | None:
    """Conformal quantile rank for m calibration scores, 1-based.

    Returns the smallest rank r with r >= (1 - alpha) * (m + 1), or None
    when that rank exceeds m: the calibration set is then too small for the
    requested level and the threshold must be the FULL_SET sentinel.

    The 1e-9 slack absorbs float rounding in the product: m=9, alpha=0.1
    must give rank 9 even though (1 - 0.1) * 10 evaluates slightly above 9.
    """
    if m < 1:
        raise InvalidInputError(f"m must be >= 1, got {m}")
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError(f"alpha must be in (0, 1), got {alpha}")
    rank = max(1, math.ceil((1.0 - alpha) * (m + 1) - 1e-9))
    return rank if rank <= m else None


def euclidean(a, b) -> float:
    """l2 distance between two equal-length vectors."""
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise DimensionError(f"length mismatch: {va.shape} vs {vb.shape}")
    return float(np.linalg.norm(va - vb))
