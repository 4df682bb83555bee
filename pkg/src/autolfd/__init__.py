"""Automatic hyperparameter tuning of movement primitives with a learned trajectory metric."""

__version__ = "0.1.0"
