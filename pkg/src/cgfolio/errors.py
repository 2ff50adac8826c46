"""Exception types shared across the package."""


class CgfolioError(Exception):
    """Base class for package errors."""


class SchemaError(CgfolioError):
    """Input file has wrong columns, types, or layout."""


class AlignmentError(CgfolioError):
    """Dated inputs (universes, covariances, returns) do not line up."""


class ValidationError(CgfolioError):
    """Data violates a model invariant (reported with offending location)."""


class InfeasibleByConstruction(CgfolioError):
    """A restricted master problem is infeasible before any solve.

    Raised when the fixed deviations of non-candidate assets already violate
    a constraint row, e.g. an excluded asset whose benchmark weight exceeds
    the per-asset deviation bound. ``row_kind``/``row_key`` identify the
    violated row so callers can repair the candidate set deliberately.
    """

    def __init__(self, message: str, row_kind: str | None = None, row_key=None):
        super().__init__(message)
        self.row_kind = row_kind
        self.row_key = row_key


class MissingDuals(CgfolioError):
    """A pricing step needs converged duals but the solve did not provide them."""


class DegeneratePortfolio(CgfolioError):
    """Portfolio value collapsed to zero or below; drift weights undefined."""


class TooLarge(CgfolioError):
    """Exhaustive enumeration requested beyond the guard-rail size."""
