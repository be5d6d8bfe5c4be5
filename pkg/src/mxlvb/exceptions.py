"""Exception hierarchy shared across the package."""


class MxlError(Exception):
    """Base class for all package errors."""


class ValidationError(MxlError, ValueError):
    """Malformed input: bad shapes, out-of-range parameters, invalid files."""


class NumericalError(MxlError, ArithmeticError):
    """A numerical routine failed, e.g. a covariance lost positive definiteness."""


class SchemaVersionError(ValidationError):
    """A persisted artifact was written with an incompatible schema version."""
