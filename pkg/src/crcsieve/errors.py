"""Exception types raised by crcsieve.

Every error raised on a contract violation derives from :class:`CrcsieveError`
so callers (and the CLI) can catch the package's failures in one place.
"""


class CrcsieveError(Exception):
    """Base class for all crcsieve errors."""


class DomainError(CrcsieveError):
    """Evaluation point outside the declared basis domain."""


class EmptyInputError(CrcsieveError):
    """An input array that must be non-empty is empty."""


class ShapeError(CrcsieveError):
    """Array dimensions are inconsistent with each other or the model."""


class DataError(CrcsieveError):
    """Non-finite or otherwise unusable values in numeric input."""


class DegenerateBasisError(CrcsieveError):
    """All basis columns were annihilated by the moment constraints."""


class CollinearityError(CrcsieveError):
    """A design block is rank deficient; the message names the offending column."""


class IdentificationError(CrcsieveError):
    """The profiled parametric block is singular beyond tolerance."""


class SelectionError(CrcsieveError):
    """Cross-validation could not produce a usable order choice."""


class BootstrapInstabilityError(CrcsieveError):
    """Too many bootstrap refits failed to trust the resulting bands."""


class WeakInstrumentError(CrcsieveError):
    """The first stage leaves the control term unusable: the instrument
    explains nothing, or it explains everything and the residual is zero."""


class DegenerateTruncationError(CrcsieveError):
    """Truncation region carries (numerically) no probability mass."""


class ReplicationError(CrcsieveError):
    """More than the tolerated share of Monte Carlo replications failed."""


class SchemaError(CrcsieveError):
    """A declared column is missing from the input table."""


class ParseError(CrcsieveError):
    """A cell could not be parsed as a number; message carries row and column."""
