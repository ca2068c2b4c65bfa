"""Quasi-constant-modulus 4D QAM formats and a nonlinear fiber link simulator."""

__version__ = "0.1.0"
