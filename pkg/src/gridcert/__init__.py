"""Power flow insolvability certificates and solvability margins."""

__version__ = "0.1.0"
