"""Exception hierarchy shared across the package."""


class SceneGenError(Exception):
    """Base class for all package errors."""


class ValidationError(SceneGenError, ValueError):
    """An input violated a documented precondition or invariant."""


class DegenerateSelectionError(ValidationError):
    """Three clicked points back-project to (nearly) collinear 3D points."""


class CacheFormatError(ValidationError):
    """A scene cache directory is malformed or fails validation."""


class CheckpointError(SceneGenError):
    """A checkpoint file is unreadable, corrupted or version-incompatible."""


class ConfigError(SceneGenError):
    """A run configuration is unusable (detected before step 0)."""


class ProviderError(SceneGenError):
    """A guidance provider call failed.

    ``retriable`` distinguishes transient backend failures (timeouts) from
    configuration problems.  ``timestep`` and ``seed`` identify the exact
    request for reproduction.
    """

    def __init__(self, message, *, retriable=False, timestep=None, seed=None):
        super().__init__(message)
        self.retriable = retriable
        self.timestep = timestep
        self.seed = seed
