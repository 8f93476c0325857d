"""Normality checking for cyclic-voltammetry runs in an automated instrument workflow."""
__version__ = "0.1.0"
