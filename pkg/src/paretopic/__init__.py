"""Setwise contrastive neural topic model with Pareto-balanced training."""

__version__ = "0.1.0"
