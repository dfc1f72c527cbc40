"""Empirical measurement of concentration of measure for a dataset's distribution."""

__version__ = "0.1.0"
