"""Contrastive learning as stochastic neighbor embedding: losses, encoders,
direct embedding optimization and numerical oracles on synthetic data."""

__version__ = "0.1.0"
