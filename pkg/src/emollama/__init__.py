"""Multimodal emotion recognition and reasoning pipeline at desk scale."""

__version__ = "0.1.0"
