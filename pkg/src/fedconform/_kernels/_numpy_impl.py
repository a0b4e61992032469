"""Vectorized numpy implementations of the numerical hot paths.

Selected when the compiled extension is unavailable (or forced via
FEDCONFORM_KERNELS=numpy); also the reference the compiled kernels are
cross-checked against. All functions expect float64 arrays; callers pass
C-contiguous data so both backends see identical inputs.
"""

from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def mlp_forward(w1, b1, w2, b2, x):
    """Batched forward pass of the one-hidden-layer relu classifier.

    x has shape (n, d). Returns ``(hidden, probs)`` with shapes (n, h) and
    (n, C); each probs row is the max-shifted softmax of the output logits.
    """
    hidden = np.maximum(x @ w1.T + b1, 0.0)
    logits = hidden @ w2.T + b2
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs = e / e.sum(axis=1, keepdims=True)
    return hidden, probs


def mlp_backward(w1, b1, w2, b2, x, y, hidden, probs):
    """Gradients of the batch-mean cross-entropy for all four layers.

    ``hidden`` and ``probs`` are the activations returned by mlp_forward
    for the same (x, y) batch. Returns (gw1, gb1, gw2, gb2).
    """
    n = x.shape[0]
    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    gw2 = dlogits.T @ hidden
    gb2 = dlogits.sum(axis=0)
    dhidden = (dlogits @ w2) * (hidden > 0.0)
    gw1 = dhidden.T @ x
    gb1 = dhidden.sum(axis=0)
    return gw1, gb1, gw2, gb2


def min_distances(bank, queries, chunk=256):
    """Euclidean distance from each query row to its nearest bank row.

    Exact linear scan; chunked so the (chunk, m, h) temporary stays small.
    """
    out = np.empty(queries.shape[0])
    for start in range(0, queries.shape[0], chunk):
        block = queries[start:start + chunk]
        d2 = ((block[:, None, :] - bank[None, :, :]) ** 2).sum(axis=2)
        out[start:start + chunk] = np.sqrt(d2.min(axis=1))
    return out
