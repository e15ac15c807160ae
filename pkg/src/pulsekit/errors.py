"""Exception types shared across the toolkit."""


class PulsekitError(Exception):
    """Base class for all toolkit errors."""


class FormatError(PulsekitError):
    """A byte stream does not conform to the expected file format."""


class TruncationError(FormatError):
    """A file ends before its declared payload does.

    Carries ``expected`` and ``actual`` byte counts when known.
    """

    def __init__(self, message: str, expected: int | None = None, actual: int | None = None):
        if expected is not None and actual is not None:
            message = f"{message} (expected {expected} bytes, got {actual})"
        super().__init__(message)
        self.expected = expected
        self.actual = actual


class ValidationError(PulsekitError):
    """Structurally well-formed data violates a semantic invariant."""


class ConfigError(PulsekitError):
    """A configuration value is out of range or inconsistent."""


class TopologyError(PulsekitError):
    """The set of input logs does not form a valid TX/RX session."""


class PulseMismatchError(PulsekitError):
    """Devices in a session disagree on the recorded sync pulses."""


class NoOverlapError(PulsekitError):
    """The input logs share no common time range after alignment."""


class ShapeError(PulsekitError):
    """An array argument has the wrong dimensions."""


class EmptyDatasetError(PulsekitError):
    """An operation requires at least one training pair."""


class DivergenceError(PulsekitError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, epoch: int | None = None):
        if epoch is not None:
            message = f"{message} (epoch {epoch})"
        super().__init__(message)
        self.epoch = epoch


class InternalError(PulsekitError):
    """An invariant the library maintains internally was broken."""
