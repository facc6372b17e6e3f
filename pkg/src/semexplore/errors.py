"""Exception types shared across the package."""


class ExplorationError(Exception):
    """Base class for all package errors."""


class OutOfBounds(ExplorationError, IndexError):
    pass


class InvalidPose(ExplorationError, ValueError):
    pass


class DimensionMismatch(ExplorationError, ValueError):
    pass


class InvalidDistribution(ExplorationError, ValueError):
    pass


class InvalidDims(ExplorationError, ValueError):
    pass


class NoPath(ExplorationError):
    pass


class InvalidEndpoint(ExplorationError, ValueError):
    pass


class PathBlocked(ExplorationError):
    pass


class DegenerateFit(ExplorationError):
    """Total sample weight too small to fit a mixture."""


class EmptyCandidates(ExplorationError, ValueError):
    pass


class ConfigError(ExplorationError, ValueError):
    pass


class SamplingExhausted(UserWarning):
    """Rejection budget ran out before the requested sample count was reached."""
