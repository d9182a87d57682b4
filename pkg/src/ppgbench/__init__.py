"""Cuffless blood pressure benchmarking from PPG with demographic late fusion."""

__version__ = "0.1.0"
