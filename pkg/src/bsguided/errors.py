"""Exception hierarchy shared by every module.

Each class carries the process exit code the command line maps it to.
"""

from __future__ import annotations


class BSGuidedError(Exception):
    """Base class for all library errors."""

    exit_code = 3


class ConfigError(BSGuidedError, ValueError):
    """Invalid user input or configuration (exit code 1)."""

    exit_code = 1


class DomainError(BSGuidedError, ValueError):
    """A precondition on the mathematical regime does not hold (exit code 2)."""

    exit_code = 2


class SingularDispersionError(DomainError):
    """The dispersion root vanishes: ``|k+K|^2 = E`` with ``eps = 0``."""


class SingularSymbolError(DomainError):
    """The free symbol ``xi^2 + |k+K|^2 - z`` comes too close to zero."""


class DivergentSumError(DomainError):
    """A lattice sum was requested with an exponent that makes it diverge."""


class RegimeViolation(DomainError):
    """A numerical check shows the configuration lies outside the regime where the curve is guaranteed."""


class NotOnCurveError(DomainError):
    """No eigenvalue of ``Gamma`` is close enough to ``1/g`` at the requested k."""

    def __init__(self, message: str, distance: float):
        super().__init__(message)
        self.distance = distance


class NumericalError(BSGuidedError, RuntimeError):
    """A solver failed to converge or produced an unusable result (exit code 3)."""


class HypothesisViolation(DomainError):
    """Input data violate a hypothesis needed for the requested boundary value."""


class IllConditionedError(NumericalError):
    """The leading eigenvalue is too close to the next one for a stable derivative."""


class TracingError(NumericalError):
    """Curve continuation failed; ``arc`` holds the last good nodes."""

    def __init__(self, message: str, arc=None):
        super().__init__(message)
        self.arc = arc if arc is not None else []
