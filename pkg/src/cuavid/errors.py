"""Exception types shared across the package."""


class CuavidError(Exception):
    """Base class for all package errors."""


class InvalidInputError(CuavidError, ValueError):
    """Shapes, ranges or configuration values violate a precondition."""


class IngestionError(CuavidError):
    """A trajectory or keyframe could not be ingested."""


class SchemaError(CuavidError):
    """A structured payload is missing fields or has the wrong types.

    ``raw`` keeps the offending payload for auditing.
    """

    def __init__(self, message, raw=None):
        super().__init__(message)
        self.raw = raw


class ResponseValidationError(SchemaError):
    """A payload parsed but carries out-of-range values."""


class StateError(CuavidError):
    """An operation was attempted in a state that does not allow it."""


class TransportError(CuavidError):
    """The external service could not be reached or returned a failure.

    ``retryable`` is False for failures a retry cannot fix (e.g. HTTP 401).
    """

    def __init__(self, message, retryable=True):
        super().__init__(message)
        self.retryable = retryable
