"""Exception hierarchy shared by all modules."""


class KmvError(Exception):
    """Base class for all package errors."""


class DomainViolationError(KmvError):
    """Point lies outside the closed domain beyond tolerance."""


class AmbiguousProjectionError(KmvError):
    """Nearest boundary point is not unique inside the band."""


class InvalidArgumentError(KmvError):
    """Arguments are structurally incompatible (domains, grids, shapes)."""


class EvaluationError(KmvError):
    """A user-supplied function produced a non-finite value; message names the offender."""


class ResolutionError(KmvError):
    """Grid too coarse for the requested quadrature."""


class NonConvergenceError(KmvError):
    """Fixed-point iteration hit max_iter; carries the distance trace."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


class IndeterminateRatioError(KmvError):
    """Contraction ratio requested with a near-zero denominator."""


class SingularDiffusionError(KmvError):
    """sigma*sigma^T not invertible where the change of measure needs it."""


class ConfigError(KmvError):
    """Experiment configuration is unparseable or references unknown components."""
