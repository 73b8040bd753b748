"""Exception types raised across the package."""


class OdonavError(Exception):
    """Base class for all odonav errors."""


class InvalidRoute(OdonavError):
    """Route construction input cannot form a valid route graph."""


class OutOfRange(OdonavError):
    """A node id or index is outside the valid range."""


class InfeasibleLevel(OdonavError):
    """No start/goal pair satisfies the requested goal-distance range."""


class EpisodeFinished(OdonavError):
    """step() called on an episode that already ended."""


class FormatError(OdonavError):
    """A binary container is malformed (bad magic, truncation, ...)."""


class VersionError(FormatError):
    """A binary container has an unsupported format version."""


class ParseError(OdonavError):
    """A text input could not be parsed; message carries the line number."""


class InvalidParameter(OdonavError):
    """A model parameter is outside its valid domain."""


class InvalidInput(OdonavError):
    """Inputs to a computation are inconsistent (lengths, counts, ...)."""


class MissingChannel(OdonavError):
    """An observation channel is required but no provider is configured."""


class ShapeError(OdonavError):
    """Array shapes are inconsistent with the configured dimensions."""


class NumericalError(OdonavError):
    """A computation produced or received non-finite values."""


class IoError(OdonavError):
    """A filesystem operation failed."""


class ConfigError(OdonavError):
    """An experiment config file is malformed or holds unknown keys."""
