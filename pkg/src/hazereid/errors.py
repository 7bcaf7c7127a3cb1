"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(RuntimeError):
    """An operation was called outside its precondition."""


class NumericError(FloatingPointError):
    """A value is NaN or infinite."""


class ConfigError(ValueError):
    """Invalid configuration values."""


class ParseError(ValueError):
    """A filename or config line does not follow the expected format."""


class IngestionError(FileNotFoundError):
    """A required input file is missing or unreadable."""
