"""Shared oracles and builders for the test suite."""

from __future__ import annotations

import numpy as np

from fedconform.core import LabeledExample
from fedconform.fedtrain import layout_size


def unpack_flat(flat: np.ndarray, dim: int, hidden: int, classes: int):
    split1 = hidden * dim
    split2 = split1 + hidden
    split3 = split2 + classes * hidden
    return (
        flat[:split1].reshape(hidden, dim),
        flat[split1:split2],
        flat[split2:split3].reshape(classes, hidden),
        flat[split3:],
    )


def cross_entropy_loss(flat: np.ndarray, dim: int, hidden: int, classes: int, x, y) -> float:
    """Batch-mean cross-entropy via a log-sum-exp forward pass.

    Written against plain numpy ops, independent of the package kernels, so
    it can serve as the oracle for gradient checks.
    """
    w1, b1, w2, b2 = unpack_flat(flat, dim, hidden, classes)
    hidden_act = np.maximum(x @ w1.T + b1, 0.0)
    logits = hidden_act @ w2.T + b2
    top = logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(logits - top).sum(axis=1)) + top[:, 0]
    return float(np.mean(lse - logits[np.arange(len(y)), y]))


def numeric_gradient(flat, dim, hidden, classes, x, y, step=1e-5) -> np.ndarray:
    """Central finite differences of cross_entropy_loss over all parameters."""
    flat = np.asarray(flat, dtype=np.float64)
    assert flat.size == layout_size(dim, hidden, classes)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        up = flat.copy()
        up[i] += step
        down = flat.copy()
        down[i] -= step
        grad[i] = (
            cross_entropy_loss(up, dim, hidden, classes, x, y)
            - cross_entropy_loss(down, dim, hidden, classes, x, y)
        ) / (2.0 * step)
    return grad


def flat_gradient(grads) -> np.ndarray:
    """Concatenate (gw1, gb1, gw2, gb2) into the flat layout."""
    gw1, gb1, gw2, gb2 = grads
    return np.concatenate([gw1.ravel(), gb1, gw2.ravel(), gb2])


def rank_oracle(m: int, alpha: float):
    """Linear-search form of the conformal rank rule (same 1e-9 slack)."""
    target = (1.0 - alpha) * (m + 1)
    for rank in range(1, m + 1):
        if rank >= target - 1e-9:
            return rank
    return None


class ForcedScoreModel:
    """Predictor whose class-0 probability is forced to 1 - score.

    Convention: features[0] indexes into the score table and the true
    label is 0, so the nonconformity of example i is exactly scores[i].
    Embeddings are the raw features, making banks fully predictable.
    """

    def __init__(self, scores, classes: int = 3):
        self.scores = np.asarray(scores, dtype=np.float64)
        self.classes = classes

    def predict_proba_batch(self, x):
        keys = np.asarray(x)[:, 0].astype(int)
        s = self.scores[keys]
        probs = np.empty((keys.size, self.classes))
        probs[:, 0] = 1.0 - s
        probs[:, 1:] = (s / (self.classes - 1))[:, None]
        return probs

    def embed_batch(self, x):
        return np.ascontiguousarray(x, dtype=np.float64)


def forced_score_examples(scores, client_id: int = 0) -> list[LabeledExample]:
    """Calibration examples keyed for ForcedScoreModel, all labeled 0."""
    return [
        LabeledExample([float(i), 0.0], 0, origin_client=client_id)
        for i in range(len(scores))
    ]


def base_config_dict(**overrides) -> dict:
    """A small, fast experiment config; sections replaceable via overrides."""
    payload = {
        "dataset": {
            "source": "synthetic",
            "classes": 3,
            "dim": 4,
            "per_class": 90,
            "separation": 4.0,
            "seed": 1,
        },
        "partition": {
            "kind": "iid",
            "clients": 3,
            "seed": 2,
            "cal_fraction": 0.25,
            "test_fraction": 0.25,
        },
        "train": {
            "rounds": 4,
            "local_epochs": 1,
            "batch_size": 32,
            "learning_rate": 0.05,
            "seed": 3,
            "hidden_dim": 16,
        },
        "conformal": {"alphas": [0.2]},
        "assignment": {"k_values": [1, 3], "space": "feature"},
        "methods": ["adaptive", "fcp", "local"],
        "output": {"directory": "results"},
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and key in payload:
            payload[key] = {**payload[key], **value}
        else:
            payload[key] = value
    return payload
