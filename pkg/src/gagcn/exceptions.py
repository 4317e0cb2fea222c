"""Exception hierarchy shared across the package."""


class GagcnError(Exception):
    """Base class for all errors raised by gagcn."""


class DimensionError(GagcnError, ValueError):
    """Operand shapes are incompatible."""


class NumericError(GagcnError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class ConfigurationError(GagcnError, ValueError):
    """Invalid model, gate, or experiment configuration."""


class ContractError(GagcnError, RuntimeError):
    """An API precondition was violated by the caller."""


class OracleError(GagcnError, RuntimeError):
    """The finite-difference oracle could not produce a trustworthy answer."""


class ParseError(GagcnError, ValueError):
    """Malformed motion or skeleton file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CheckpointError(GagcnError, IOError):
    """Checkpoint container is truncated, corrupted, or incompatible."""


class DivergenceError(GagcnError, RuntimeError):
    """Training loss blew up; carries the last good parameter snapshot."""

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good
