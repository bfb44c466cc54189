"""Exception types shared across the package."""


class SwarmscanError(Exception):
    """Base class for package errors."""


class SceneFormatError(SwarmscanError):
    """Raised when a scene file is malformed or violates scene invariants."""


class ConfigError(SwarmscanError):
    """Raised for invalid configuration values or unknown keys."""


class CameraPoseError(SwarmscanError):
    """Raised when a sensor pose is outside the map or inside solid geometry."""


class UnknownInstanceError(SwarmscanError):
    """Raised when an observation references an instance id absent from the scene."""


class MissingCacheEntryError(SwarmscanError):
    """Raised when an instance surface voxel has no entry in the loss cache."""


class SimInvariantError(SwarmscanError):
    """Raised when the simulation detects a broken runtime invariant."""
