"""Federated-learning security simulator built on permutation-based weight shuffling."""

__version__ = "0.1.0"
