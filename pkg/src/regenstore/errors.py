"""Exception types shared across the package."""


class RegenError(Exception):
    """Base class for all package errors."""


class InvalidInput(RegenError, ValueError):
    pass


class SingularSystem(RegenError):
    """A linear system (or a decode) is rank deficient."""


class ProtocolViolation(RegenError):
    """A repair was attempted with the wrong number or shape of responses."""


class InvalidEvent(RegenError, ValueError):
    pass


class NoThreshold(RegenError):
    """No alpha in [0, 1] makes the scenario feasible."""


class Unreachable(RegenError):
    """The requested unavailability target cannot be met in the swept range."""


class FormatError(RegenError, ValueError):
    pass


class EstimateUndefined(RegenError):
    pass
