"""Smooth backfitting for additive inverse regression with a convolution operator."""

__version__ = "0.1.0"
