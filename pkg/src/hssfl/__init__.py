"""Desk-scale deterministic simulator for federated self-supervised learning
across heterogeneous encoders, with kernel-alignment coupling and empirical
convergence-bound verification."""

__version__ = "0.1.0"
