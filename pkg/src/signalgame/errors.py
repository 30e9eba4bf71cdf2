"""Exception hierarchy shared across the package."""


class SignalGameError(Exception):
    """Base class for all errors raised by signalgame."""


class StructuralError(SignalGameError, ValueError):
    """Shapes or labels of game objects do not line up."""


class ValidationError(SignalGameError, ValueError):
    """A value violates a documented invariant."""

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = list(violations or [message])


class PreconditionError(SignalGameError, ValueError):
    """An operation was called outside its domain."""


class NumericError(SignalGameError, ArithmeticError):
    """Non-finite values reached a numeric routine."""


class UnknownIdError(SignalGameError, KeyError):
    """An intent, strategy or role identifier is not known."""


class BackendError(SignalGameError):
    """Base class for policy-backend failures."""


class CapabilityError(BackendError):
    """The backend cannot provide what was asked (e.g. no log-probabilities)."""


class ElicitationError(BackendError):
    """No usable index log-probabilities could be read from a response."""


class ParseError(BackendError):
    """A model response did not follow the requested output format."""


class BackendFailure(BackendError):
    """Transport-level failure that survived the retry budget."""


class TurnError(SignalGameError):
    """A dialogue turn could not be completed."""
