"""Exception hierarchy shared by every module."""

from __future__ import annotations


class LindcalError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(LindcalError, ValueError):
    """Inconsistent or malformed model configuration."""


class DomainError(LindcalError, ValueError):
    """Argument outside the mathematical domain of a function."""


class IntegrationDiverged(LindcalError, ArithmeticError):
    def __init__(self, time_us: float, message: str = "") -> None:
        self.time_us = time_us
        super().__init__(message or f"integration produced a non-finite state at t={time_us:g} us")


class PositivityViolation(LindcalError, ArithmeticError):
    """A population fell below the tolerated negative floor."""


class InputError(LindcalError, ValueError):
    """Invalid data passed to a measurement routine."""


class MitigationUnreliable(LindcalError):
    def __init__(self, condition_number: float) -> None:
        self.condition_number = condition_number
        super().__init__(f"confusion matrix too ill-conditioned for mitigation (cond={condition_number:.3g})")


class IncompleteCalibration(LindcalError, ValueError):
    """Calibration counts missing for one or more basis states."""


class GradientProbeError(LindcalError, ArithmeticError):
    def __init__(self, slot: str, message: str = "") -> None:
        self.slot = slot
        super().__init__(message or f"non-finite loss while probing slot {slot!r}")


class FitFailed(LindcalError):
    """Every optimizer restart diverged."""


class NothingToCompare(LindcalError, ValueError):
    """Subsystem fits share no qubits."""


class MissingCoupling(LindcalError, ValueError):
    """A neighbouring pair has no fit supplying its coupling."""
