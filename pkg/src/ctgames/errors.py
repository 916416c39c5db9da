"""Exception hierarchy shared by all ctgames modules."""


class CTGamesError(Exception):
    """Base class for all package errors."""


class SizingError(CTGamesError):
    """A state space would exceed the index range or memory budget."""


class DecompositionError(CTGamesError):
    """An intensity matrix entry cannot be attributed to exactly one mover."""


class DataError(CTGamesError):
    """Input data are malformed, out of range, or not time-ordered."""


class ConvergenceError(CTGamesError):
    """An iterative solver hit its iteration limit.

    Attributes
    ----------
    residual : float
        Sup-norm change at the final iteration.
    iterations : int
        Number of iterations performed.
    """

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class InversionDomainError(CTGamesError):
    """CCP inversion or log-hazard evaluated at a zero probability."""


class ModelStructureError(CTGamesError):
    """A model violates a structural rank or continuation-map requirement."""


class IdentificationError(CTGamesError):
    """Restrictions are inconsistent with the hazard system."""


class PricingError(CTGamesError):
    """Bertrand-Nash pricing Newton iteration failed to converge."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class EstimationError(CTGamesError):
    """Every optimizer start failed.

    Attributes
    ----------
    starts : list
        Per-start diagnostic records.
    """

    def __init__(self, message, starts=None):
        super().__init__(message)
        self.starts = list(starts or [])


class ConfigError(CTGamesError):
    """Invalid run configuration."""
