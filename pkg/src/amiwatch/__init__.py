"""Anomaly detection for hourly smart-meter consumption.

Modules: ``ingest`` (loading, imputation, features), ``stats``, ``gbdt``
(boosted regressor), ``mdscore`` (Mahalanobis scoring), ``autoenc``
(autoencoder), ``cluster``, ``evalboot`` and the ``cli`` entry point.
"""
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
