"""Multi-fidelity kriging surrogates for ship wind-load coefficients."""

__version__ = "0.1.0"
