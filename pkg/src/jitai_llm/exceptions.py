"""Exception types raised across the package."""


class ParameterError(ValueError):
    """A simulator or model parameter is outside its valid range."""


class ConfigurationError(ValueError):
    """Missing or inconsistent configuration (empty pool, missing API key, ...)."""


class UsageError(RuntimeError):
    """An operation was called in a state where it is not allowed."""


class TransportError(RuntimeError):
    """The chat-completion endpoint could not produce a usable response.

    ``status_code`` is set when the last failure was an HTTP error status.
    """

    def __init__(self, message, status_code=None, attempts=0):
        super().__init__(message)
        self.status_code = status_code
        self.attempts = attempts
