"""Differentially private average consensus with encrypted distributed shuffling."""
__version__ = "0.1.0"
