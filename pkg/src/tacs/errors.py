class TacsError(Exception):
    """Base class for errors raised by this package."""


class ResourceGuardError(TacsError, ValueError):
    """A dense operation was requested beyond the size it is allowed to run at."""


class ConfigError(TacsError, ValueError):
    """Invalid or incomplete run configuration."""


class NumericalError(TacsError, ArithmeticError):
    """A numerical routine produced output that violates its contract."""
