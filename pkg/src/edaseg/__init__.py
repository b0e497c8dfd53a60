"""Numpy re-implementation of a real-time lane segmentation network family with
dense dilated blocks, plus its analyzer, synthetic data and training tools."""

__version__ = "0.1.0"
