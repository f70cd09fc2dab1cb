"""Higher-order influence function statistics and falsification tests for DML estimators."""

__version__ = "0.1.0"
