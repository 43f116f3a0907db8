"""Feynman-Kac representations, boundary classification and PDE cross-checks for degenerate diffusions."""

__version__ = "1.0.0"
