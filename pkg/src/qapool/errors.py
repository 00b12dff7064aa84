"""Exception types shared across modules."""


class QapoolError(Exception):
    """Base class for all package errors."""


class TransportError(QapoolError):
    """Network failure or server error that survived the retry budget."""


class AuthError(QapoolError):
    """Missing credentials or an HTTP 401/403; never retried."""


class RateLimitError(QapoolError):
    """HTTP 429 still present after the retry budget."""


class InvalidRequest(QapoolError):
    """A request violated its invariants before any backend call."""


class ConfigError(QapoolError):
    """A run configuration is malformed or references missing files."""
