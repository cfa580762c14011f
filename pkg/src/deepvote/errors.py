"""Exception types shared across the package."""


class DeepVoteError(Exception):
    """Base class for all package errors."""


class ConfigError(DeepVoteError):
    """A shape, parameter, or wiring mismatch the caller must fix."""


class DataError(DeepVoteError):
    """Malformed, missing, or protocol-violating input data."""


class GenerationError(DeepVoteError):
    """Scene synthesis could not satisfy its constraints."""
