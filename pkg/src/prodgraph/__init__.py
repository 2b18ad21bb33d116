"""Product-graph topology inference from two-dimensional stationary signals."""

__version__ = "0.1.0"
