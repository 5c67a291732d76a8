"""Exception hierarchy shared across the package."""


class S2KANError(Exception):
    """Base class for all errors raised by s2kan."""


class ConfigurationError(S2KANError, ValueError):
    """Invalid construction parameters (degenerate domains, bad shapes, bad config files)."""


class DomainViolationError(S2KANError, ValueError):
    """An unprotected primitive was evaluated outside its natural domain."""

    def __init__(self, kind, x):
        self.kind = kind
        self.x = x
        super().__init__(f"primitive {kind!r} evaluated outside its domain at x={x!r}")


class NonFiniteError(S2KANError, FloatingPointError):
    """A forward pass or loss produced NaN/inf.

    ``where`` carries the coordinates of the offending edge (layer, in-node, out-slot)
    or the epoch/batch of a training step.
    """

    def __init__(self, message, where=None):
        self.where = where
        self.message = message
        super().__init__(message if where is None else f"{message} at {where}")


class StaleTapeError(S2KANError, RuntimeError):
    """A tape was replayed against a network whose parameters changed since the forward pass."""


class MalformedFileError(S2KANError, ValueError):
    """A checkpoint or data file could not be parsed."""


class VersionMismatchError(S2KANError, ValueError):
    """A checkpoint was written with an unsupported format version."""


class DataError(S2KANError, ValueError):
    """Tabular input is missing columns or contains unusable cells."""
