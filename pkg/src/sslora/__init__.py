"""Subspace-constrained multi-domain LoRA on a numpy substrate."""

__version__ = "0.1.0"
