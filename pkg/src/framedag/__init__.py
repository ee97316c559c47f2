"""Sparse dataflow execution over keyframe-indexed frame tables."""

__version__ = "0.1.0"
