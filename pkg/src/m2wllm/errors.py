"""Exception hierarchy shared across the package."""


class M2WError(Exception):
    """Base class for every error raised by this package."""


class ContractError(M2WError, ValueError):
    """A precondition of an operation was violated."""


class DimensionError(ContractError):
    """Operand shapes are incompatible."""


class ConfigError(M2WError, ValueError):
    """Invalid or unknown configuration."""


class CorruptionError(M2WError, IOError):
    """A checkpoint archive failed an integrity check."""


class SchemaError(M2WError, ValueError):
    """Input data or an archive does not match the documented schema."""
