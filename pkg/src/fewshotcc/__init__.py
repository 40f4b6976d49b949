"""Few-shot camera-adaptive color constancy toolkit."""

__version__ = "0.1.0"
