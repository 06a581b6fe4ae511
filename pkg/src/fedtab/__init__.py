"""Federated TabNet training on featurized time series."""

__version__ = "0.1.0"
