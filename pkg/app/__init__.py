"""Forced symmetry breaking on invariant tori of coupled oscillator populations."""

__version__ = "0.1.0"
