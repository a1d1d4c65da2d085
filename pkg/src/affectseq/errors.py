"""Exception types used across the package."""


class AffectSeqError(Exception):
    """Base class for every failure this package raises on purpose."""


class DimensionError(AffectSeqError):
    """Operands have incompatible shapes."""


class DomainError(AffectSeqError):
    """A value lies outside the domain an operation accepts."""


class NumericError(AffectSeqError):
    """Non-finite values showed up where finite ones are required."""


class DataError(AffectSeqError):
    """Malformed or inconsistent data files and tracks."""


class CoverageError(DataError):
    """Predictions do not cover every annotated (movie, second)."""


class ConfigError(AffectSeqError):
    """Invalid or contradictory configuration."""


class ContractViolation(AffectSeqError):
    """A caller-supplied callable broke its documented contract."""
