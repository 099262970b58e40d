"""Exception types shared across the package."""


class StreamAsrError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(StreamAsrError, ValueError):
    """Invalid or inconsistent configuration (flags, config file, overrides)."""


class InputError(StreamAsrError, ValueError):
    """Malformed runtime input: NaN audio, wrong emission width, bad file content."""


class SpecError(StreamAsrError, ValueError):
    """Invalid layer/model specification or mismatched weight shapes."""


class StreamError(StreamAsrError, KeyError):
    """Unknown, closed, or otherwise unusable stream id."""
