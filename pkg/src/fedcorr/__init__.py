"""Correlation-aware compression of federated model updates.

Measures structural, temporal and spatial correlation in client updates and
switches between SVD, PCA and predictive-coding compressors accordingly.
"""

from fedcorr.errors import (
    FedCorrError,
    InsufficientSamples,
    InvalidInput,
    ParseError,
    ProtocolViolation,
    ShapeMismatch,
)

__version__ = "0.1.0"

__all__ = [
    "FedCorrError",
    "InsufficientSamples",
    "InvalidInput",
    "ParseError",
    "ProtocolViolation",
    "ShapeMismatch",
]
