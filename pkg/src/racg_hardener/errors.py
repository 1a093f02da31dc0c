"""Exception types shared across modules."""


class ConfigurationError(Exception):
    """A handle or file was set up wrong (bad replay script, missing endpoint)."""


class LoadError(Exception):
    """A persisted file could not be parsed; message names the offending line."""


class TransportError(Exception):
    """Retryable HTTP failure; carries how many attempts were made."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts
