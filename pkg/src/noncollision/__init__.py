"""Numerical toolkit for the two-center two-body non-collision singularity mechanism."""

__version__ = "0.1.0"
