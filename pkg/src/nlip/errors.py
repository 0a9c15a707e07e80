"""Exception and warning types raised across the package."""

from __future__ import annotations


class NlipError(Exception):
    """Base class for all package errors."""


class InvalidResolutionError(NlipError, ValueError):
    pass


class ShapeMismatchError(NlipError, ValueError):
    pass


class SolverFailureError(NlipError, RuntimeError):
    pass


class WellPosednessError(NlipError, RuntimeError):
    """Newton iteration did not converge; the data probably left the small-data regime."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


class AdmissibilityError(NlipError, ValueError):
    """Boundary data exceeds the admissible norm bound of an oracle."""


class ScheduleError(NlipError, ValueError):
    """An epsilon schedule would feed inadmissible data to an oracle."""


class FrequencyCapError(NlipError, ValueError):
    pass


class InstabilityError(NlipError, RuntimeError):
    pass


class RegionError(NlipError, ValueError):
    pass


class ConditioningError(NlipError, RuntimeError):
    pass


class ConfigError(NlipError, ValueError):
    pass


class DegenerateInputWarning(UserWarning):
    pass


class NonsmoothWarning(UserWarning):
    pass
