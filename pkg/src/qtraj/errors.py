"""Exception types shared across the package.

Every failure that a caller can reasonably branch on gets its own class;
anything else is a plain ValueError at the offending call site.
"""

from __future__ import annotations


class QtrajError(Exception):
    """Base class for all package-specific errors."""


class SnippetParseError(QtrajError):
    """A tabular record could not be parsed; message carries the row number."""


class SnippetValidationError(QtrajError):
    """Parsed records violate a structural rule (e.g. duplicate timestamps)."""


class InsufficientDataError(QtrajError):
    """Too few usable subjects remain to fit anything."""


class InsufficientLocalDataError(QtrajError):
    """No usable mass near the query level.

    Raised when a bin is empty or a kernel denominator falls below its floor.
    The message names the query point and the bandwidth in effect.
    """


class FitFailureError(QtrajError):
    """A parametric fit did not produce usable coefficients."""


class InversionFailureError(QtrajError):
    """The conditional CDF never crossed the requested level on any bracket."""


class DomainError(QtrajError):
    """A query or start value lies outside the permitted level interval."""


class OracleRefinementError(QtrajError):
    """The Monte Carlo oracle cannot resolve the request; increase mc_size."""
