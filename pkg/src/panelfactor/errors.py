"""Exception hierarchy shared across the package.

Three broad families matter to callers (and to the CLI exit-code mapping):
bad data, bad parameter values, and numerical failures discovered mid
computation.  Everything derives from :class:`PanelFactorError` so callers
can catch the lot with one clause.
"""


class PanelFactorError(Exception):
    """Base class for errors raised by this package."""


class DataError(PanelFactorError):
    """Input data is malformed: non-finite entries, ragged rows, bad cells,
    shape mismatches, or panels too small to be usable."""


class InvalidParameterError(PanelFactorError, ValueError):
    """A parameter value is outside its documented domain (rank out of
    range, negative threshold, unknown method name, ...)."""


class NumericalError(PanelFactorError):
    """A computation failed numerically in a way that cannot be attributed
    to obviously bad input."""


class DegenerateSpectrumError(NumericalError):
    """An operation needed a strictly positive singular value and found one
    that is numerically zero."""


class DegenerateSystemError(NumericalError):
    """A linear system that should have been invertible was singular or
    conditioned beyond the documented threshold."""


class DegenerateGeometryError(NumericalError):
    """A cross-product between true and estimated quantities is too close
    to singular for a rotation matrix to be meaningful."""


class NonDistinctEigenvaluesError(NumericalError):
    """Eigenvalues required to be distinct are tied within tolerance, so a
    uniquely ordered eigenbasis does not exist."""


class NonConvergenceError(NumericalError):
    """An iterative solver hit its iteration cap before meeting its
    tolerance.  The last iterate is attached as ``result``."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class InfeasibleConstraintsError(DataError):
    """A restriction system is unusable: self-contradictory (no loading
    matrix can satisfy it) or geometrically degenerate for the system it is
    applied to."""


class UnstableDgpError(NumericalError):
    """A simulation produced non-finite draws or metrics too often for the
    run to be trusted."""
