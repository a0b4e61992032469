"""Federated conformal prediction simulator.

Trains a shared classifier over synchronous FedAvg rounds, calibrates a
split-conformal threshold per client, and builds prediction sets three
ways: a pooled global threshold, the test sample's own client threshold,
or the max over the thresholds of the clients nearest in representation
space. Heterogeneous client populations come from Dirichlet class skew or
weighted sample skew over synthetic Gaussian mixtures or CSV datasets.
"""

__version__ = "0.1.0"

from fedconform._kernels import BACKEND as KERNEL_BACKEND
from fedconform.core import (
    FULL_SET,
    LabeledExample,
    euclidean,
    quantile_index,
    softmax,
)

__all__ = [
    "FULL_SET",
    "KERNEL_BACKEND",
    "LabeledExample",
    "euclidean",
    "quantile_index",
    "softmax",
    "__version__",
]
