"""Corruption benchmarks, heterogeneous augmentation and robustness metrics
for pixel-labelled segmentation data."""

__version__ = "0.1.0"
