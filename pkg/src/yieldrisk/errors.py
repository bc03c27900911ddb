"""Exception taxonomy shared across the package.

Input-side problems (malformed files, schema mismatches, inconsistent
identifiers, bad configuration) and numerical problems (non-convergence,
rank deficiency, divergent samplers) live in separate branches so callers
can map them to distinct exit codes.
"""

from __future__ import annotations


class YieldriskError(Exception):
    """Base class for every error raised by this package."""


class DataError(YieldriskError):
    """Input-side failure: files, schemas, identifiers, configuration."""


class SchemaError(DataError):
    """A required column is missing or the header does not match."""


class RowError(DataError):
    """One or more data rows failed validation.

    Attributes
    ----------
    lines : tuple of int
        1-based line numbers of the offending rows (header is line 1).
    """

    def __init__(self, message: str, lines: tuple[int, ...] = ()):
        super().__init__(message)
        self.lines = tuple(lines)


class ConsistencyError(DataError):
    """Identifiers violate the nesting structure (e.g. one parcel in two households)."""


class DomainError(DataError, ValueError):
    """A value lies outside the mathematical domain of an operation."""


class ContractError(DataError):
    """An insurance contract definition is structurally invalid."""


class CoverageError(DataError):
    """A rainfall series does not cover the dates a computation needs.

    Attributes
    ----------
    missing_dates : tuple
        The dates that were required but absent.
    """

    def __init__(self, message: str, missing_dates: tuple = ()):
        super().__init__(message)
        self.missing_dates = tuple(missing_dates)


class ConfigError(DataError):
    """A configuration file or CLI argument combination is invalid."""


class NumericalError(YieldriskError):
    """Numerical failure during fitting or sampling."""


class RankDeficiencyError(NumericalError):
    """The regression design is rank deficient.

    Attributes
    ----------
    columns : tuple of str
        Labels of the columns that cannot be separated from the rest.
    """

    def __init__(self, message: str, columns: tuple[str, ...] = ()):
        super().__init__(message)
        self.columns = tuple(columns)


class ConvergenceError(NumericalError):
    """An iterative fit failed to converge.

    Attributes
    ----------
    last_iterate : object
        Whatever state the optimizer had when it gave up, for post-mortems.
    """

    def __init__(self, message: str, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class GibbsError(NumericalError):
    """The sampler produced a non-finite conditional parameter.

    Attributes
    ----------
    iteration : int
        Sweep number at which the problem appeared.
    parameter : str
        Name of the offending parameter block.
    """

    def __init__(self, message: str, iteration: int = -1, parameter: str = ""):
        super().__init__(message)
        self.iteration = iteration
        self.parameter = parameter
