"""Exception hierarchy shared by the engines and labs."""


class GammaLabError(Exception):
    pass


class DomainError(GammaLabError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class ValidationError(GammaLabError, ValueError):
    """Malformed structured input (breakpoints, configs, CSV tables)."""


class AliasingError(GammaLabError):
    """Quadrature too coarse to resolve the requested degree exactly."""


class AccuracyError(GammaLabError):
    """Successive refinements of a numerical quantity disagree."""


class TruncationError(GammaLabError):
    """A truncated spectral series has a tail above tolerance."""

    def __init__(self, message, required_degree=None):
        super().__init__(message)
        self.required_degree = required_degree


class NumericalError(GammaLabError):
    """Non-finite intermediate or solver failure."""


class ConstructionError(GammaLabError):
    """Infeasible geometric construction."""


class ResolutionError(GammaLabError):
    """Small-time limit did not settle at the available resolution."""


class ExperimentError(GammaLabError):
    """Experiment produced too little data for its fit."""
