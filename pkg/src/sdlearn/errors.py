"""Exception hierarchy shared by the library and the command line."""


class SdlError(ValueError):
    """Base class for all errors raised by sdlearn."""


class DimensionError(SdlError):
    """Array shapes disagree with each other or with a declared header."""


class FormatError(SdlError):
    """A serialized file (model, dataset cache, IDX, PGM) is malformed."""


class DataError(SdlError):
    """A dataset violates a precondition (empty class, zero row, ...)."""


class SolverError(SdlError):
    """A numerical routine hit non-finite values or an invalid bound."""


class TrainingAborted(SdlError):
    """Training stopped because the objective became non-finite."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
