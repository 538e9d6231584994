"""Predictor-based REINFORCE search over model configurations."""

__version__ = "0.1.0"
