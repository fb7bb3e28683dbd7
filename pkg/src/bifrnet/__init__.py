"""Occlusion-robust image classification with feature restoration."""

__version__ = "0.1.0"
