"""Desk-scale video-vs-image diffusion pre-training comparison toolkit."""

__version__ = "0.1.0"
