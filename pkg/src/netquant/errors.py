"""Exception hierarchy shared by every netquant module."""

from __future__ import annotations


class NetquantError(Exception):
    """Base class for all errors raised by netquant."""


class DomainError(NetquantError, ValueError):
    """An argument lies outside the domain of the operation."""


class SingularDesignError(NetquantError):
    """The regression design is rank deficient."""

    def __init__(self, message: str, column: int | None = None):
        super().__init__(message)
        self.column = column


class NonConvergenceError(NetquantError):
    """The interior-point solver hit its iteration cap.

    ``best`` carries the last iterate (a :class:`~netquant.qr_core.QuantileFit`).
    """

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class SimulationError(NetquantError):
    """The data-generating recursion failed for some period."""

    def __init__(self, message: str, period: int | None = None):
        super().__init__(message)
        self.period = period


class EstimationError(NetquantError):
    """An estimator could not produce a result."""


class InstrumentError(EstimationError):
    """Instruments are degenerate (zero variance or collinear)."""


class InferenceError(NetquantError):
    """Covariance estimation failed (e.g. singular Jacobian)."""


class DegenerateFitError(NetquantError):
    """A goodness-of-fit ratio is undefined."""


class DataError(NetquantError):
    """Input data is malformed; carries file/row/column context when known."""

    def __init__(self, message: str, path=None, row: int | None = None, column: int | None = None):
        loc = []
        if path is not None:
            loc.append(str(path))
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column}")
        full = f"{message} ({', '.join(loc)})" if loc else message
        super().__init__(full)
        self.path = path
        self.row = row
        self.column = column
