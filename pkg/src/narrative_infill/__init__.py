"""Visual narrative generation with train- and inference-time infilling."""

__version__ = "0.1.0"
