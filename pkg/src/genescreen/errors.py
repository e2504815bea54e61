"""Exception and warning types raised by genescreen."""


class ScreenError(Exception):
    """Base class for all genescreen errors."""

    exit_code = 2


class DataError(ScreenError):
    """Input data failed validation."""


class EmptyGroup(DataError):
    pass


class ValueOutOfRange(DataError):
    pass


class MissingValue(DataError):
    pass


class OrphanMarker(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class InsufficientData(DataError):
    pass


class InsufficientHoldout(DataError):
    pass


class DegenerateTruth(DataError):
    pass


class ParseError(DataError):
    """Raised while reading an input file.

    Parameters
    ----------
    message : str
        What went wrong.
    path : str, optional
        File being parsed.
    line : int, optional
        1-based line number of the offending line.
    """

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class NumericalUnderflow(ScreenError):
    exit_code = 3


class UsageError(ScreenError):
    exit_code = 1


class ChainDivergenceWarning(UserWarning):
    """Two chains disagree on the gene-level probabilities."""


class TruncationWarning(UserWarning):
    """The last stick-breaking weight carries non-negligible mass."""
