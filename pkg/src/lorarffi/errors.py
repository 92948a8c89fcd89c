"""Exception hierarchy shared across the package."""


class RffiError(Exception):
    """Base class for every error raised by lorarffi."""


class ConfigurationError(RffiError, ValueError):
    pass


class DegenerateSignalError(RffiError, ValueError):
    """Signal has zero power where a nonzero one is required."""


class InsufficientDataError(RffiError, ValueError):
    pass


class NoPacketDetectedError(RffiError):
    pass


class DimensionError(RffiError, ValueError):
    pass


class FormatError(RffiError):
    """A dataset or checkpoint file is malformed, truncated or of the wrong version."""
