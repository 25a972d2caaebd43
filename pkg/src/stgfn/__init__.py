"""Semantic-temporal graph fusion for negotiation outcome and utility prediction."""

__version__ = "0.1.0"
