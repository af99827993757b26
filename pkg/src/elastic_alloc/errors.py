"""Exception hierarchy shared by every module."""


class ElasticAllocError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ElasticAllocError, ValueError):
    pass


class DomainError(ElasticAllocError, ValueError):
    """A node count outside the legal set was passed to the speed model."""


class TraceError(ElasticAllocError, ValueError):
    """Malformed or invalid trace input.  ``row`` is 1-based when known."""

    def __init__(self, message, row=None):
        self.row = row
        self.reason = message
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class BuildError(ElasticAllocError):
    pass


class DecodeError(ElasticAllocError):
    pass


class SolverSizeError(ElasticAllocError):
    """Instance too large for exhaustive enumeration."""


class InfeasibleError(ElasticAllocError):
    pass


class PlanRejectedError(ElasticAllocError):
    """An allocation plan would violate capacity or legality when applied."""

    def __init__(self, message, audit=None):
        self.audit = audit or {}
        super().__init__(message)


class InvariantViolation(ElasticAllocError):
    """Simulator state broke a conservation or consistency invariant."""

    def __init__(self, message, state=None):
        self.state = state or {}
        super().__init__(message)


class MilestoneError(ElasticAllocError):
    pass
