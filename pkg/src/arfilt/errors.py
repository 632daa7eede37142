"""Exception types shared across the package."""


class ArfiltError(Exception):
    """Base class for package-specific errors."""


class ConfigError(ArfiltError):
    """Invalid or inconsistent experiment configuration."""


class StabilityError(ArfiltError):
    """An operation required a stable filter or matrix and got an unstable one."""


class ConvergenceError(ArfiltError):
    """An iterative solve failed to converge; carries the last residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NoFeasibleGammaError(ArfiltError):
    """No grid point produced a finite sufficient-length bound."""


class DegeneratePolynomialError(ArfiltError):
    """Polynomial is (numerically) zero on the interpolation nodes."""


class InsufficientHistoryError(ArfiltError):
    """Rollout burn-in is too short to build full regression histories."""


class DataError(ArfiltError):
    """Stored experiment data is missing pieces or fails integrity checks."""


class UnstableFilterWarning(UserWarning):
    """Simulated or unrolled values exceeded the overflow threshold."""
