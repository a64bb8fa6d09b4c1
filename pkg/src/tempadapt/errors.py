"""Exception hierarchy shared across the package.

Exit-code mapping for the CLI: ConfigurationError -> 1, DataError -> 2,
IntegrityError -> 3.
"""


class TempadaptError(Exception):
    """Base class for all package errors."""


class ConfigurationError(TempadaptError):
    """Invalid or inconsistent configuration (bad field map, bad spec, ...)."""


class DataError(TempadaptError):
    """Input data violates a precondition (empty slice, label out of range, ...)."""


class IntegrityError(TempadaptError):
    """Stored artifacts disagree with their recorded provenance or hash."""


class SamplingError(DataError):
    """Not enough documents to satisfy a sampling request."""
