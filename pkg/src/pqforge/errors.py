"""Exception hierarchy shared by every pqforge module."""


class PQForgeError(Exception):
    """Base class for all pqforge errors."""


class ConfigError(PQForgeError, ValueError):
    """Invalid configuration: unknown key, bad enum value, stage/method mismatch."""

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class DataError(PQForgeError, ValueError):
    """Malformed dataset or labels outside the class range."""


class ShapeError(PQForgeError, ValueError):
    """Operand dimensions do not line up."""


class StateError(PQForgeError, RuntimeError):
    """An operation was called in the wrong lifecycle state."""


class UnsupportedArchitectureError(PQForgeError):
    """Model topology that the sequential graph cannot express."""


class BundleError(PQForgeError):
    """Deploy bundle is corrupt, truncated or from another format version."""


class DeployError(PQForgeError):
    """Model cannot be lowered to exact integer arithmetic."""


class SearchError(PQForgeError):
    """A compression search could not reach its target."""

    def __init__(self, message, best=None):
        self.best = best
        super().__init__(message)
