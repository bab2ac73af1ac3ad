"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class FermitreeError(Exception):
    """Base class for all library errors."""


class ConfigurationError(FermitreeError, ValueError):
    """Invalid model or run configuration (CLI exit code 2)."""


class DomainError(FermitreeError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class NumericError(FermitreeError, ArithmeticError):
    """A numerical routine failed or produced non-finite output (CLI exit code 3)."""


class ResourceError(FermitreeError, RuntimeError):
    """A request exceeds a configured size or cost cap."""
