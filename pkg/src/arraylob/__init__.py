"""Batch-parallel fixed-array limit order book and market-replay execution environments."""

__version__ = "0.1.0"
