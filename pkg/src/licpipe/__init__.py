"""Learned image compression runtime with a multi-threaded stage pipeline."""

__version__ = "0.1.0"
