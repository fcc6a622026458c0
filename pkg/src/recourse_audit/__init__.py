"""Subgroup-level recourse fairness auditing for binary classifiers."""

__version__ = "0.1.0"
