"""Single-region integrated assessment kernel for Korean net-zero scenarios."""

__version__ = "0.1.0"
