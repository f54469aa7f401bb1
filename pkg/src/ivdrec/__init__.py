"""Cluster-based MF recommender, shilling-attack forge, and item-vector-deviation detection."""

__version__ = "0.1.0"
