"""Exception types shared across the package.

Grouped so callers can distinguish configuration mistakes (bad parameters,
mismatched shapes, malformed files) from genuine numerical failures
(breakdown inside an iteration, diverging training, degenerate spectra).
"""


class ReconstabError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(ReconstabError, ValueError):
    """A scalar or structural parameter is outside its documented domain."""


class ShapeError(ReconstabError, ValueError):
    """A vector or matrix does not have the dimensions the operation needs."""


class CapabilityError(ReconstabError):
    """The request is valid but outside what this implementation supports."""


class RankDeficiencyError(ReconstabError):
    """An exact inverse was requested for an operator with a zero singular value."""


class DegenerateSpectrumError(ReconstabError):
    """A construction divides by a singular value that is numerically zero."""


class NumericalBreakdownError(ReconstabError):
    """An iteration produced a non-finite quantity.

    `iteration` records the 1-based iteration index at which it happened.
    """

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class TrainingDivergedError(ReconstabError):
    """A training loss became non-finite.  `epoch` is the 1-based epoch index."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class PgmParseError(ReconstabError, ValueError):
    """A PGM file is malformed.  `offset` is the byte position of the defect."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset
