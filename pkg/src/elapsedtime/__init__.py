"""Solver and verification suite for the elapsed-time neuron model."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConfigError,
    DegenerateConstants,
    ElapsedTimeError,
    GridMismatch,
    InsufficientData,
    NonConvergence,
    NumericalError,
    ValidationError,
)
