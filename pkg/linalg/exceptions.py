"""Errors raised by the numerical kernels."""


class DimensionMismatch(ValueError):
    """Operand shapes do not fit the requested operation."""


class SingularMatrix(ArithmeticError):
    """A factorization hit a zero pivot.

    ``pivot_row`` is the offending row when it could be located, ``None``
    otherwise. ``subdomain`` is filled in by the Schwarz builder so the
    message names the failing local problem.
    """

    def __init__(self, pivot_row=None, subdomain=None, detail=""):
        self.pivot_row = pivot_row
        self.subdomain = subdomain
        self.detail = detail
        super().__init__(self._message())

    def _message(self):
        where = f"pivot row {self.pivot_row}" if self.pivot_row is not None else "unknown pivot row"
        msg = f"Singular matrix ({where})"
        if self.subdomain is not None:
            msg = f"Subdomain {self.subdomain}: {msg}"
        if self.detail:
            msg = f"{msg}: {self.detail}"
        return msg


class NonFiniteResult(ArithmeticError):
    """An operation produced NaN or Inf entries."""


class NotPositiveDefinite(ArithmeticError):
    """A matrix expected to be symmetric positive definite is not."""


class MatrixMarketError(ValueError):
    """Malformed or inconsistent MatrixMarket file."""


class SizeLimitExceeded(ValueError):
    """A dense computation was requested above the configured size limit."""
