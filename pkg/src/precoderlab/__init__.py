"""Gradient-driven GNN precoders for multi-user MIMO, with classical baselines."""

__version__ = "0.1.0"
