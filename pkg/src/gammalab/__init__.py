"""Numerical laboratory for Gamma-calculus, Bobkov-type functionals and quantitative isoperimetry."""
from .errors import (  # noqa: F401
    AliasingError, DomainError, GammaLabError, ResolutionError, TruncationError, ValidationError,
)

__version__ = "0.1.0"
