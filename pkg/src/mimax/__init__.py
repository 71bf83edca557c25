"""Mutual-information view of self-supervised learning on a toy Gaussian mixture."""

__version__ = "0.1.0"
