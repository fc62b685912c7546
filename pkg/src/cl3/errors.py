"""Exception types shared across the package."""


class Cl3Error(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(Cl3Error, ValueError):
    """Invalid input data, configuration, or file contents."""


class ProtocolError(Cl3Error, RuntimeError):
    """Wire-protocol violation or a failed federation session."""


class FrameError(ProtocolError):
    """Malformed, corrupted, or truncated protocol frame."""
