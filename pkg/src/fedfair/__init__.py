"""Bias-heterogeneous federated tabular datasets and client-level fairness evaluation."""

__version__ = "0.1.0"
