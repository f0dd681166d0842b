"""Exception types raised across fwikit."""

from sklearn.exceptions import NotFittedError as _SkNotFitted


class FwiError(Exception):
    """Base class for all fwikit errors."""


class ShapeError(FwiError, ValueError):
    """Arrays or grids that should line up do not."""


class FormatError(FwiError, ValueError):
    """A persisted file does not match its header."""


class InstabilityError(FwiError, FloatingPointError):
    """Time stepping produced non-finite values."""

    def __init__(self, message, courant=None):
        super().__init__(message)
        self.courant = courant


class ConsistencyError(FwiError, ValueError):
    """A boundary tape was replayed against a different configuration."""


class TransformError(FwiError, ValueError):
    """A trace cannot be mapped to a probability density."""


class GeometryError(FwiError, ValueError):
    """Sources, receivers or specimen shapes fall outside the allowed region."""


class NotFittedError(FwiError, _SkNotFitted):
    """Estimator used before ``fit``."""
