"""Exception types shared across the library.

Argument validation failures (bad shapes, non-finite entries, out-of-range
tolerances) raise plain ValueError.  The classes below cover failures of the
numerical methods themselves, so callers can distinguish "you passed garbage"
from "the computation did not go through".
"""


class LfmControlError(Exception):
    """Base class for errors raised by this library."""


class StabilityError(LfmControlError):
    """A matrix required to be Hurwitz has an eigenvalue at or right of the
    imaginary axis."""


class SpectrumOverlapError(LfmControlError):
    """Spectra of two operators overlap where the method needs them disjoint
    (singular Sylvester equation)."""


class StabilizabilityError(LfmControlError):
    """An uncontrollable unstable mode was detected by the PBH test."""


class ConvergenceError(LfmControlError):
    """An iterative solver stopped without reaching its residual target.

    Attributes:
        residual: final residual norm, or None when not applicable.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ConditioningError(LfmControlError):
    """A matrix that must be solvable (innovation covariance, prediction
    covariance) is singular or numerically indefinite."""


class FactorizationError(LfmControlError):
    """Spectral factorization failed: a root sits on the imaginary axis or a
    stable/antistable split could not be extracted."""


class IntegrationError(LfmControlError):
    """A fixed-step integration blew up (norm growth beyond bound)."""


class OptimizationError(LfmControlError):
    """All optimizer starts failed to improve on their initial objective."""


class InvariantError(LfmControlError):
    """A structural property the construction is supposed to guarantee does
    not hold (e.g. nonzero latent rows in the controllability matrix)."""
