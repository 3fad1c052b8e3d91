"""Exception types raised by the simulation core."""


class FockFeedbackError(Exception):
    """Base class for all package errors."""


class AllZero(FockFeedbackError):
    """No population exceeds the support tolerance."""


class ImpossibleOutcome(FockFeedbackError):
    """A measurement outcome with (numerically) zero probability was forced."""


class CapacityExceeded(FockFeedbackError):
    """The Fock-space buffer would grow beyond the configured hard cap."""


class NotFound(FockFeedbackError):
    """A window search gave up before its scan limit."""
