"""fairfedlab: a desk-scale federated-learning fairness laboratory.

Scalarized fair objectives (identity, power, tilted, huberized-log) with
their closed-form dual weights, bargaining/proportional-fairness oracles,
synthetic heterogeneous data generators, a deterministic local-SGD engine,
and a convergence-theorem harness.
"""

from . import bargain, datagen, fedsim, metrics, model, scalarize
from .errors import (
    ConfigError,
    DimensionError,
    DomainError,
    ExhaustionError,
    SingularError,
)

__version__ = "0.1.0"

__all__ = [
    "scalarize",
    "bargain",
    "model",
    "datagen",
    "fedsim",
    "metrics",
    "DomainError",
    "SingularError",
    "DimensionError",
    "ExhaustionError",
    "ConfigError",
    "__version__",
]
