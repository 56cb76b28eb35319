"""Exception hierarchy. The CLI maps these onto exit codes."""


class PeerbenchError(Exception):
    """Base class for all package errors."""


class DataError(PeerbenchError, ValueError):
    """Bad input data: malformed CSV, invalid transforms, degenerate groups."""


class NumericError(PeerbenchError, ArithmeticError):
    """A numerical procedure could not produce a valid result."""


class InsufficientReplicatesError(NumericError):
    """Too few bootstrap replicates for the requested statistic."""
