"""Desk-scale dance-to-music pipeline: rhythm extraction from skeleton
motion, temporal alignment to the latent timeline, conditional
flow-matching generation, and beat-alignment metrics."""

__version__ = "0.1.0"
