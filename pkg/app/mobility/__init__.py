"""Behavioral embeddings of symbolic mobility trajectories."""

__version__ = "0.1.0"
