"""Causal VGAE: concept-free causal disentanglement for graph auto-encoders."""

__version__ = "0.1.0"
