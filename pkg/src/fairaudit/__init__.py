"""Fairness-aware quality audits for tabular classifiers."""

__version__ = "0.1.0"
