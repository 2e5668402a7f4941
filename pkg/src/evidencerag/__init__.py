"""Hybrid retrieval with support filtering for terminology-dense corpora."""

__version__ = "0.1.0"
