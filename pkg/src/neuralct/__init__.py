"""Time-resolved CT reconstruction of moving objects with neural signed distance functions."""

__version__ = "0.1.0"
