"""Shrinkage estimators of treatment effects in overlapping subgroups of randomized trials."""

__version__ = "0.1.0"
